"""
Focal points, discriminants and landscape stability.

Ellipse critical points are found on the parameterization θ ↦ (a cosθ, b sinθ)
by sign-change bracketing and brentq. Focal points on a rank stratum are
eigenvalue coincidences of M_α = αT + (1−α)S. The 2x2 discriminants are
evaluated from closed forms and the frozen term table in discriminant_terms.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, fsolve, minimize_scalar

from config import (
    CONTINUITY_FACTOR, COLLISION_GRID, DEGENERATE_CURVATURE, ELLIPSE_SAMPLES,
    FOCAL_GAP_RTOL, FOCAL_TIE_TOL, ROOT_XTOL,
)
from core.discriminant_terms import TERMS
from core.errors import (
    BaselineDegenerateError, DegenerateTeacherError, NonGenericSegmentError,
    PolylandWarning, PreconditionError, SchemaError, ShapeError,
)
from core.quadlandscape import QuadMetric, as_symmetric, ey_frobenius_critical, ey_gaussian_critical

log = logging.getLogger(__name__)

FOCAL_SAMPLES = 2001
_GOLDEN = (math.sqrt(5) - 1) / 2


# ── Varieties and queries ───────────────────────────────────

@dataclass(frozen=True, eq=False)
class MetricPD:
    sigma: np.ndarray

    def __post_init__(self):
        sigma = as_symmetric(self.sigma, "Sigma")
        if np.linalg.eigvalsh(sigma).min() <= 0:
            raise PreconditionError("Sigma must be positive definite")
        sigma.flags.writeable = False
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def identity(cls, m: int = 2) -> "MetricPD":
        return cls(np.eye(m))

    def norm_sq(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ self.sigma @ v)


@dataclass(frozen=True)
class Ellipse:
    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise PreconditionError(f"ellipse semi-axes must be positive, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class RankStratum:
    n: int
    r: int
    metric: QuadMetric

    def __post_init__(self):
        if not 1 <= self.r <= self.n:
            raise PreconditionError(f"rank stratum needs 1 <= r <= n, got r={self.r}, n={self.n}")
        if self.metric.kind not in ("frobenius", "gaussian"):
            raise PreconditionError(f"rank stratum supports frobenius and gaussian, got {self.metric.kind}")


@dataclass(frozen=True, eq=False)
class FocalQuery:
    variety: Ellipse | RankStratum
    teacher: np.ndarray
    sigma: MetricPD | None = None

    @classmethod
    def from_dict(cls, payload: dict) -> "FocalQuery":
        try:
            kind = payload["variety"]
            teacher = np.asarray(payload["teacher"], dtype=float)
            if kind == "ellipse":
                sigma = MetricPD(np.asarray(payload.get("sigma", np.eye(2)), dtype=float))
                return cls(Ellipse(float(payload["a"]), float(payload["b"])), teacher, sigma)
            if kind == "stratum":
                metric = QuadMetric.from_dict(payload.get("metric", {"kind": "frobenius"}))
                return cls(RankStratum(teacher.shape[0], int(payload["r"]), metric), teacher)
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"focal query document is malformed: {e}") from e
        raise SchemaError(f"unknown variety {kind!r}")


# ── Ellipse ─────────────────────────────────────────────────

@dataclass(frozen=True)
class EllipseCriticalPoint:
    theta: float
    point: tuple[float, float]
    index: int | None
    value: float
    curvature: float

    @property
    def degenerate(self) -> bool:
        return self.index is None

    def to_dict(self) -> dict:
        return {"theta": self.theta, "point": list(self.point), "index": self.index,
                "value": self.value, "degenerate": self.degenerate}


def ellipse_evolute_cusp(a: float, b: float) -> float:
    """x-coordinate (a² − b²)/a of the evolute cusp on the major axis."""
    return (a * a - b * b) / a


def _periodic_roots(f, period: float, samples: int) -> list[float]:
    """All sign-change and exact roots of a periodic function on [0, period)."""
    grid = np.arange(samples) * (period / samples)
    values = np.array([f(x) for x in grid])
    roots = [float(x) for x, v in zip(grid, values) if v == 0.0]
    for k in range(samples):
        lo, hi = values[k], values[(k + 1) % samples]
        if lo * hi < 0:
            if k + 1 < samples:
                root = brentq(f, grid[k], grid[k + 1], xtol=ROOT_XTOL)
            else:
                # wrap-around bracket, shifted so its right end is exactly grid[0]
                root = brentq(f, grid[k] - period, 0.0, xtol=ROOT_XTOL) % period
            roots.append(float(root))
    return sorted(roots)


def ellipse_critical_points(t, sigma: MetricPD, a: float, b: float,
                            samples: int = ELLIPSE_SAMPLES) -> list[EllipseCriticalPoint]:
    """Critical points of s ↦ ‖s − t‖²_Σ on the ellipse x²/a² + y²/b² = 1."""
    Ellipse(a, b)
    t = np.asarray(t, dtype=float)
    if t.shape != (2,):
        raise ShapeError(f"teacher must be a point in R^2, got shape {t.shape}")
    M = sigma.sigma

    def position(theta):
        return np.array([a * math.cos(theta), b * math.sin(theta)])

    def velocity(theta):
        return np.array([-a * math.sin(theta), b * math.cos(theta)])

    def first(theta):
        return 2.0 * float((position(theta) - t) @ M @ velocity(theta))

    def second(theta):
        s, ds = position(theta), velocity(theta)
        return 2.0 * float(ds @ M @ ds - (s - t) @ M @ s)

    points = []
    for theta in _periodic_roots(first, 2 * math.pi, samples):
        curvature = second(theta)
        if abs(curvature) < DEGENERATE_CURVATURE:
            index = None
        else:
            index = 0 if curvature > 0 else 1
        s = position(theta)
        points.append(EllipseCriticalPoint(theta, (float(s[0]), float(s[1])), index,
                                           sigma.norm_sq(s - t), curvature))
    return points


# ── Focal points on segments ────────────────────────────────

@dataclass(frozen=True)
class FocalCrossing:
    alpha: float
    multiplicity: int

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "multiplicity": self.multiplicity}


def _group(crossings: list[tuple[float, int]], tol: float) -> list[FocalCrossing]:
    grouped: list[list] = []
    for alpha, count in sorted(crossings):
        if grouped and alpha - grouped[-1][0] <= tol:
            grouped[-1][1] += count
            grouped[-1][2] += 1
        else:
            grouped.append([alpha, count, 1])
    for alpha, _, events in grouped:
        if events > 1:
            warnings.warn(f"several eigenvalue pairs cross at alpha={alpha:.12g}; the focal count is ambiguous",
                          PolylandWarning, stacklevel=3)
    return [FocalCrossing(alpha, count) for alpha, count, _ in grouped]


def _commuting_crossings(S: np.ndarray, T: np.ndarray, scale: float) -> list[tuple[float, int]]:
    _, V = np.linalg.eigh(T + _GOLDEN * S)
    s = np.einsum("ik,ij,jk->k", V, S, V)
    slope = np.einsum("ik,ij,jk->k", V, T, V) - s
    tol = FOCAL_GAP_RTOL * scale
    crossings = []
    for k in range(s.shape[0]):
        for l in range(k + 1, s.shape[0]):
            offset, rate = s[k] - s[l], slope[k] - slope[l]
            if abs(rate) <= tol:
                if abs(offset) <= tol:
                    raise NonGenericSegmentError(
                        "two eigenvalues coincide along the whole segment")
                continue
            alpha = -offset / rate
            if FOCAL_TIE_TOL < alpha <= 1 + FOCAL_TIE_TOL:
                crossings.append((min(float(alpha), 1.0), 1))
    return crossings


def _cluster_pairs(eigenvalues: np.ndarray, tol: float) -> int:
    pairs, run = 0, 1
    for gap in np.diff(eigenvalues):
        if gap <= tol:
            run += 1
        else:
            pairs += run * (run - 1) // 2
            run = 1
    return pairs + run * (run - 1) // 2


def _sampled_crossings(S: np.ndarray, T: np.ndarray) -> list[tuple[float, int]]:
    def spectrum(alpha):
        return np.linalg.eigvalsh(alpha * T + (1 - alpha) * S)

    def threshold(values):
        return FOCAL_GAP_RTOL * max(np.abs(values).max(), np.finfo(float).tiny)

    alphas = np.linspace(0.0, 1.0, FOCAL_SAMPLES)
    spectra = np.array([spectrum(alpha) for alpha in alphas])
    gaps = np.diff(spectra, axis=1)
    limits = FOCAL_GAP_RTOL * np.maximum(np.abs(spectra).max(axis=1), np.finfo(float).tiny)
    if np.any(np.all(gaps <= limits[:, None], axis=0)):
        raise NonGenericSegmentError("two eigenvalues coincide along the whole segment")

    found = []
    for k in range(gaps.shape[1]):
        g = gaps[:, k]
        for m in range(1, alphas.shape[0]):
            right = g[m + 1] if m + 1 < alphas.shape[0] else np.inf
            if not (g[m] <= g[m - 1] and g[m] <= right):
                continue
            upper = alphas[min(m + 1, alphas.shape[0] - 1)]
            best = minimize_scalar(lambda x: float(np.diff(spectrum(x))[k]),
                                   bounds=(alphas[m - 1], upper), method="bounded",
                                   options={"xatol": 1e-14})
            values = spectrum(best.x)
            if np.diff(values)[k] <= threshold(values) and best.x > FOCAL_TIE_TOL:
                found.append(float(best.x))

    crossings = []
    for alpha in sorted(found):
        if crossings and alpha - crossings[-1][0] <= 1e-8:
            continue
        values = spectrum(alpha)
        crossings.append((alpha, _cluster_pairs(values, max(threshold(values), 1e-8 * np.abs(values).max()))))
    return crossings


def focal_points_on_segment(S, T, metric: QuadMetric) -> list[FocalCrossing]:
    """Parameters α ∈ (0, 1] where αT + (1−α)S has a repeated eigenvalue, with pair multiplicities."""
    if metric.kind not in ("frobenius", "gaussian"):
        raise PreconditionError(f"focal points are computed for frobenius and gaussian, got {metric.kind}")
    S, T = as_symmetric(S, "S"), as_symmetric(T, "T")
    if S.shape != T.shape:
        raise ShapeError(f"S has shape {S.shape}, T has shape {T.shape}")
    scale = max(np.linalg.norm(S), np.linalg.norm(T), np.finfo(float).tiny)
    if np.linalg.norm(S @ T - T @ S) <= 1e-10 * scale * scale:
        return _group(_commuting_crossings(S, T, scale), FOCAL_TIE_TOL)
    return _group(_sampled_crossings(S, T), 1e-8)


# ── 2x2 discriminants ───────────────────────────────────────

def _as_2x2(T) -> np.ndarray:
    T = as_symmetric(T)
    if T.shape != (2, 2):
        raise ShapeError(f"teacher must be 2x2, got shape {T.shape}")
    return T


def discriminant_2x2_frobenius(T) -> float:
    """((t00 − t11)² + 4 t01²)³; zero exactly on repeated eigenvalues."""
    T = _as_2x2(T)
    base = (T[0, 0] - T[1, 1]) ** 2 + 4 * T[0, 1] ** 2
    return float(base ** 3)


def _iid_terms(T, mu2: float, mu4: float) -> np.ndarray:
    T = _as_2x2(T)
    t00, t01, t11 = T[0, 0], T[0, 1], T[1, 1]
    return np.array([coef * mu2 ** p2 * mu4 ** p4 * t00 ** i * t01 ** j * t11 ** k
                     for coef, p2, p4, i, j, k in TERMS])


def discriminant_2x2_iid(T, mu2: float, mu4: float) -> float:
    """Discriminant of the rank-one critical points for 2x2 teachers under iid data.

    Only the zero set is meaningful; the overall sign and scale are not normalized.
    """
    return float(_iid_terms(T, mu2, mu4).sum())


def discriminant_2x2_iid_scale(T, mu2: float, mu4: float) -> float:
    """Sum of absolute term magnitudes; the reference scale for vanishing tests."""
    return float(np.abs(_iid_terms(T, mu2, mu4)).sum())


# ── iid rank-one stratum, 2x2 ───────────────────────────────

@dataclass(frozen=True, eq=False)
class Rank1Critical:
    phi: float
    lam: float
    S: np.ndarray


class _Rank1Reduction:
    """S = λ u uᵀ with u = (cos φ, sin φ) and optimal λ = A(φ)/B(φ)."""

    def __init__(self, T: np.ndarray, mu2: float, mu4: float):
        self.T = T
        self.m2 = mu2 ** 2
        self.kappa = mu4 - 3 * self.m2
        self.trace = T[0, 0] + T[1, 1]

    def A(self, phi):
        c, s = math.cos(phi), math.sin(phi)
        T = self.T
        quad = c * c * T[0, 0] + 2 * c * s * T[0, 1] + s * s * T[1, 1]
        return 2 * self.m2 * quad + self.m2 * self.trace + self.kappa * (c * c * T[0, 0] + s * s * T[1, 1])

    def dA(self, phi):
        T = self.T
        diff, s2, c2 = T[1, 1] - T[0, 0], math.sin(2 * phi), math.cos(2 * phi)
        return 2 * self.m2 * (diff * s2 + 2 * T[0, 1] * c2) + self.kappa * diff * s2

    def d2A(self, phi):
        T = self.T
        diff, s2, c2 = T[1, 1] - T[0, 0], math.sin(2 * phi), math.cos(2 * phi)
        return 2 * self.m2 * (2 * diff * c2 - 4 * T[0, 1] * s2) + 2 * self.kappa * diff * c2

    def B(self, phi):
        c, s = math.cos(phi), math.sin(phi)
        return 3 * self.m2 + self.kappa * (c ** 4 + s ** 4)

    def dB(self, phi):
        return -self.kappa * math.sin(4 * phi)

    def d2B(self, phi):
        return -4 * self.kappa * math.cos(4 * phi)

    def F(self, phi):
        return 2 * self.dA(phi) * self.B(phi) - self.A(phi) * self.dB(phi)

    def dF(self, phi):
        return (2 * self.d2A(phi) * self.B(phi) + self.dA(phi) * self.dB(phi)
                - self.A(phi) * self.d2B(phi))


def rank1_critical_angles_2x2(T, mu2: float, mu4: float,
                              samples: int = ELLIPSE_SAMPLES) -> list[Rank1Critical]:
    """Nonzero critical points of the iid loss on rank-one 2x2 symmetric matrices."""
    T = _as_2x2(T)
    if mu2 <= 0 or mu4 <= 0:
        raise PreconditionError(f"need mu2 > 0 and mu4 > 0, got {mu2}, {mu4}")
    red = _Rank1Reduction(T, mu2, mu4)
    scale = max(np.linalg.norm(T), np.finfo(float).tiny) * red.m2
    points = []
    for phi in _periodic_roots(red.F, math.pi, samples):
        A = red.A(phi)
        if abs(A) <= 1e-12 * scale:
            continue
        lam = A / red.B(phi)
        u = np.array([math.cos(phi), math.sin(phi)])
        points.append(Rank1Critical(phi, lam, lam * np.outer(u, u)))
    return points


@dataclass(frozen=True, eq=False)
class CollisionResult:
    s: float
    phi: float
    teacher: np.ndarray
    value: float
    scale: float
    counts: tuple[int, int]


def collision_teacher(T0, T1, mu2: float, mu4: float, grid: int = COLLISION_GRID) -> CollisionResult:
    """Teacher on the segment T0 → T1 where two rank-one critical points merge."""
    T0, T1 = _as_2x2(T0), _as_2x2(T1)

    def teacher(s):
        return (1 - s) * T0 + s * T1

    def count(s):
        return len(rank1_critical_angles_2x2(teacher(s), mu2, mu4))

    steps = np.linspace(0.0, 1.0, grid + 1)
    counts = [count(s) for s in steps]
    change = next((k for k in range(grid) if counts[k] != counts[k + 1]), None)
    if change is None:
        raise PreconditionError("critical-point count is constant along the teacher path")
    lo, hi = float(steps[change]), float(steps[change + 1])
    c_lo, c_hi = counts[change], counts[change + 1]
    for _ in range(60):
        mid = (lo + hi) / 2
        if count(mid) == c_lo:
            lo = mid
        else:
            hi = mid

    # start from the closest pair of roots on the side with more roots
    s0 = lo if c_lo > c_hi else hi
    phis = [p.phi for p in rank1_critical_angles_2x2(teacher(s0), mu2, mu4)]
    gaps = [((phis[(k + 1) % len(phis)] - phis[k]) % math.pi, k) for k in range(len(phis))]
    _, k = min(gaps)
    phi0 = phis[k] + ((phis[(k + 1) % len(phis)] - phis[k]) % math.pi) / 2

    def system(x):
        red = _Rank1Reduction(teacher(x[1]), mu2, mu4)
        return [red.F(x[0]), red.dF(x[0])]

    (phi, s), info, ier, message = fsolve(system, [phi0, s0], full_output=True, xtol=1e-14)
    if ier != 1:
        log.warning("collision solve did not converge: %s", message)
    T = teacher(s)
    return CollisionResult(float(s), float(phi % math.pi), T, discriminant_2x2_iid(T, mu2, mu4),
                           discriminant_2x2_iid_scale(T, mu2, mu4), (c_lo, c_hi))


# ── Stability ───────────────────────────────────────────────

@dataclass
class StabilityReport:
    stable: bool
    baseline_count: int
    baseline_signature: tuple[int | None, ...]
    baseline_degenerate: bool = False
    counts_observed: list[int] = field(default_factory=list)
    violations: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"stable": self.stable,
                "baseline": {"count": self.baseline_count, "signature": list(self.baseline_signature)},
                "baseline_degenerate": self.baseline_degenerate,
                "counts_observed": self.counts_observed,
                "violations": self.violations}


def _signature(indices) -> tuple:
    return tuple(sorted(indices, key=lambda i: (i is None, i)))


def _random_symmetric(rng, m: int, radius: float) -> np.ndarray:
    E = rng.normal(size=(m, m))
    E = (E + E.T) / 2
    return E * (radius * rng.uniform() / np.linalg.norm(E))


def _ellipse_state(variety: Ellipse, t, sigma: MetricPD):
    points = ellipse_critical_points(t, sigma, variety.a, variety.b)
    return [np.array(p.point) for p in points], [p.index for p in points]


def _stratum_state(variety: RankStratum, T):
    enumerate_rank = ey_frobenius_critical if variety.metric.kind == "frobenius" else ey_gaussian_critical
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PolylandWarning)
        points = enumerate_rank(T, variety.r)
    return [p.S for p in points], [p.index for p in points]


def stability_probe(t, variety: Ellipse | RankStratum, radius: float, samples: int, seed: int,
                    sigma: MetricPD | None = None, strict: bool = False) -> StabilityReport:
    """Perturb (t, Σ) within radius and check that count, indices and positions persist."""
    if radius <= 0 or samples < 1:
        raise PreconditionError(f"need radius > 0 and samples >= 1, got {radius}, {samples}")
    t = np.asarray(t, dtype=float)
    if isinstance(variety, Ellipse):
        sigma = sigma if sigma is not None else MetricPD.identity(2)

        def state(rng):
            if rng is None:
                return _ellipse_state(variety, t, sigma)
            direction = rng.normal(size=2)
            dt = direction * (radius * rng.uniform() / np.linalg.norm(direction))
            return _ellipse_state(variety, t + dt, MetricPD(sigma.sigma + _random_symmetric(rng, 2, radius)))
    else:
        def state(rng):
            T = t if rng is None else t + _random_symmetric(rng, t.shape[0], radius)
            return _stratum_state(variety, T)

    try:
        base_points, base_indices = state(None)
    except DegenerateTeacherError as e:
        if strict:
            raise BaselineDegenerateError(f"baseline teacher is degenerate: {e}") from e
        return StabilityReport(False, 0, (), True, [], [{"sample": None, "reason": str(e)}])
    degenerate = any(i is None for i in base_indices)
    if degenerate and strict:
        raise BaselineDegenerateError("baseline has a degenerate critical point; it lies on the discriminant")

    report = StabilityReport(not degenerate, len(base_points), _signature(base_indices), degenerate)
    observed = {len(base_points)}
    streams = np.random.SeedSequence(seed).spawn(samples)
    for k, stream in enumerate(streams):
        try:
            points, indices = state(np.random.default_rng(stream))
        except DegenerateTeacherError as e:
            report.violations.append({"sample": k, "reason": f"degenerate: {e}"})
            continue
        observed.add(len(points))
        reasons = []
        if len(points) != len(base_points):
            reasons.append("count")
        if _signature(indices) != report.baseline_signature:
            reasons.append("signature")
        if any(min(np.linalg.norm(p - q) for q in base_points) > CONTINUITY_FACTOR * radius
               for p in points):
            reasons.append("continuity")
        if reasons:
            report.violations.append({"sample": k, "count": len(points),
                                      "signature": list(_signature(indices)), "reason": ",".join(reasons)})
    report.counts_observed = sorted(observed)
    report.stable = report.stable and not report.violations
    log.debug("stability probe: %d samples, %d violations", samples, len(report.violations))
    return report


# ── Focal queries ───────────────────────────────────────────

def run_focal_query(query: FocalQuery) -> dict:
    """Critical points of the query and, on rank strata, their focal crossings."""
    if isinstance(query.variety, Ellipse):
        sigma = query.sigma if query.sigma is not None else MetricPD.identity(2)
        points = ellipse_critical_points(query.teacher, sigma, query.variety.a, query.variety.b)
        return {"variety": "ellipse", "cusp": ellipse_evolute_cusp(query.variety.a, query.variety.b),
                "critical_points": [p.to_dict() for p in points]}
    stratum = query.variety
    enumerate_rank = ey_frobenius_critical if stratum.metric.kind == "frobenius" else ey_gaussian_critical
    rows = []
    for point in enumerate_rank(query.teacher, stratum.r):
        crossings = focal_points_on_segment(point.S, query.teacher, stratum.metric)
        rows.append({"support": [i + 1 for i in point.support], "index": point.index,
                     "crossings": [c.to_dict() for c in crossings]})
    return {"variety": "stratum", "critical_points": rows}
