"""
Critical points of quadratic (d = 2) teacher-student losses.

A student is a symmetric matrix S = Wᵀ diag(α) W of rank ≤ r. Every metric
below is a quadratic form ⟨S, T⟩ = tr(S·G(T)) for a self-adjoint operator G,
so the squared distance is tr(D·G(D)) with D = S − T and its Euclidean
gradient is 2·G(D). S is critical on the rank-r stratum iff ∇h_T(S)·S = 0.
"""
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import least_squares

from config import DEDUP_TOL, EIGEN_GAP_RTOL, HESSIAN_NEG_RTOL, RESIDUAL_TOL
from core.errors import (
    DegenerateTeacherError, InternalInconsistencyError, PolylandWarning,
    PreconditionError, SchemaError, ShapeError,
)
from core.network import NetworkParams, numerical_rank

log = logging.getLogger(__name__)

METRIC_KINDS = ("frobenius", "gaussian", "iid", "weighted")


# ── Matrix metrics ──────────────────────────────────────────

@dataclass(frozen=True)
class QuadMetric:
    """Quadratic metric on symmetric matrices.

    gaussian is ‖D‖²_F + ½tr(D)², half of the rotation-invariant form
    2tr(ST) + tr(S)tr(T); weighted(a, b) is a·tr(ST) + b·tr(S)tr(T).
    """

    kind: str
    mu2: float = 1.0
    mu4: float = 3.0
    a: float = 1.0
    b: float = 0.5

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise PreconditionError(f"unknown metric kind {self.kind!r}; expected one of {METRIC_KINDS}")
        if self.kind == "iid" and (self.mu2 <= 0 or self.mu4 <= 0):
            raise PreconditionError(f"iid metric needs mu2 > 0 and mu4 > 0, got {self.mu2}, {self.mu4}")
        if self.kind == "weighted" and self.a <= 0:
            raise PreconditionError(f"weighted metric needs a > 0, got {self.a}")

    @classmethod
    def frobenius(cls) -> "QuadMetric":
        return cls("frobenius")

    @classmethod
    def gaussian(cls) -> "QuadMetric":
        return cls("gaussian")

    @classmethod
    def iid(cls, mu2: float, mu4: float) -> "QuadMetric":
        return cls("iid", mu2=mu2, mu4=mu4)

    @classmethod
    def weighted(cls, a: float, b: float) -> "QuadMetric":
        return cls("weighted", a=a, b=b)

    def apply(self, D: np.ndarray) -> np.ndarray:
        eye = np.eye(D.shape[0])
        trace = np.trace(D)
        if self.kind == "frobenius":
            return D
        if self.kind == "gaussian":
            return D + 0.5 * trace * eye
        if self.kind == "weighted":
            return self.a * D + self.b * trace * eye
        m2 = self.mu2 ** 2
        return 2 * m2 * D + m2 * trace * eye + (self.mu4 - 3 * m2) * np.diag(np.diag(D))

    def inner(self, S, T) -> float:
        S, T = _pair(S, T)
        return float(np.sum(S * self.apply(T)))

    def distance_sq(self, S, T) -> float:
        S, T = _pair(S, T)
        D = S - T
        return float(np.sum(D * self.apply(D)))

    def gradient(self, S, T) -> np.ndarray:
        S, T = _pair(S, T)
        return 2 * self.apply(S - T)

    def to_dict(self) -> dict:
        payload = {"kind": self.kind}
        if self.kind == "iid":
            payload.update(mu2=self.mu2, mu4=self.mu4)
        elif self.kind == "weighted":
            payload.update(a=self.a, b=self.b)
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "QuadMetric":
        try:
            kind = payload["kind"]
        except (KeyError, TypeError) as e:
            raise SchemaError(f"metric document needs a kind: {e}") from e
        keys = {k: float(payload[k]) for k in ("mu2", "mu4", "a", "b") if k in payload}
        return cls(kind, **keys)


def as_symmetric(T, name: str = "T") -> np.ndarray:
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ShapeError(f"{name} must be a square matrix, got shape {T.shape}")
    if not np.allclose(T, T.T, atol=1e-10 * max(1.0, np.abs(T).max(initial=0.0))):
        raise PreconditionError(f"{name} must be symmetric")
    return (T + T.T) / 2


def _pair(S, T) -> tuple[np.ndarray, np.ndarray]:
    S, T = as_symmetric(S, "S"), as_symmetric(T, "T")
    if S.shape != T.shape:
        raise ShapeError(f"S has shape {S.shape}, T has shape {T.shape}")
    return S, T


def func_gradient(metric: QuadMetric, S, T) -> np.ndarray:
    """Euclidean gradient at S of the squared metric distance to T."""
    return metric.gradient(S, T)


def param_gradient(params: NetworkParams, metric: QuadMetric, T) -> tuple[np.ndarray, np.ndarray]:
    """(∇α, ∇W) of ‖Wᵀdiag(α)W − T‖²_metric."""
    if params.d != 2:
        raise PreconditionError(f"param_gradient is defined for d = 2, got d={params.d}")
    S = params.W.T @ np.diag(params.alpha) @ params.W
    half = func_gradient(metric, S, T) / 2
    grad_W = 4 * params.alpha[:, None] * (params.W @ half)
    grad_alpha = 2 * np.einsum("ij,jk,ik->i", params.W, half, params.W)
    return grad_alpha, grad_W


def criticality_residual(metric: QuadMetric, S, T) -> float:
    """‖∇h_T(S)·S‖_F / (‖T‖+‖S‖)²."""
    S, T = _pair(S, T)
    scale = (np.linalg.norm(T) + np.linalg.norm(S)) ** 2
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(func_gradient(metric, S, T) @ S) / scale)


# ── Critical point records ──────────────────────────────────

@dataclass(frozen=True)
class IIDCriticalCertificate:
    support: tuple[int, ...]
    signs: tuple[int, ...]
    epsilon: int
    beta: float
    gamma: float
    v: np.ndarray

    def to_dict(self) -> dict:
        return {"support": [i + 1 for i in self.support], "signs": list(self.signs),
                "epsilon": self.epsilon, "beta": self.beta, "gamma": self.gamma,
                "v": self.v.tolist()}


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    S: np.ndarray
    rank: int
    support: tuple[int, ...]
    index: int | None
    c: float = 0.0
    residual: float = 0.0
    degenerate: bool = False
    certificate: IIDCriticalCertificate | None = None

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.linalg.eigvalsh(self.S))

    def to_dict(self) -> dict:
        payload = {
            "kind": "critical_point",
            "S": self.S.tolist(),
            "rank": self.rank,
            "support": [i + 1 for i in self.support],
            "index": self.index,
            "c": self.c,
            "residual": self.residual,
            "degenerate": self.degenerate,
            "eigenvalues": self.eigenvalues.tolist(),
        }
        if self.certificate is not None:
            payload["certificate"] = self.certificate.to_dict()
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "CriticalPoint":
        try:
            return cls(np.asarray(payload["S"], dtype=float), int(payload["rank"]),
                       tuple(int(i) - 1 for i in payload["support"]), payload["index"],
                       float(payload.get("c", 0.0)), float(payload.get("residual", 0.0)),
                       bool(payload.get("degenerate", False)))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"critical point document is malformed: {e}") from e

    def csv_row(self) -> list:
        support = " ".join(str(i + 1) for i in self.support)
        eigenvalues = " ".join(f"{v:.12g}" for v in self.eigenvalues)
        index = "" if self.index is None else self.index
        return [support, eigenvalues, index, f"{self.residual:.3e}"]


CSV_HEADER = ["support", "eigenvalues", "index", "residual"]


# ── Eckart-Young enumerations ───────────────────────────────

def sorted_eigh(T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs in descending order; each eigenvector's first nonzero entry is positive."""
    values, vectors = np.linalg.eigh(T)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    for k in range(vectors.shape[1]):
        lead = np.flatnonzero(np.abs(vectors[:, k]) > 1e-12)
        if lead.size and vectors[lead[0], k] < 0:
            vectors[:, k] = -vectors[:, k]
    return values, vectors


def _check_teacher(T, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    T = as_symmetric(T)
    n = T.shape[0]
    if not 1 <= r <= n:
        raise PreconditionError(f"rank must satisfy 1 <= r <= n={n}, got {r}")
    scale = np.linalg.norm(T)
    sigma, U = sorted_eigh(T)
    if scale == 0 or np.abs(sigma).min() <= EIGEN_GAP_RTOL * scale:
        raise DegenerateTeacherError("teacher must have full rank")
    if n > 1 and np.min(-np.diff(sigma)) <= EIGEN_GAP_RTOL * scale:
        raise DegenerateTeacherError("teacher must have distinct eigenvalues")
    return T, sigma, U


def _ratio_index(shifted: np.ndarray, support: tuple[int, ...]) -> int:
    complement = [j for j in range(shifted.shape[0]) if j not in support]
    return sum(1 for i in support for j in complement if 0 <= shifted[i] / shifted[j] <= 1)


def _eigen_enumeration(T, r: int, metric: QuadMetric, shift) -> list[CriticalPoint]:
    T, sigma, U = _check_teacher(T, r)
    n = T.shape[0]
    scale = np.linalg.norm(T)
    points = []
    for support in itertools.combinations(range(n), r):
        complement = [j for j in range(n) if j not in support]
        c = shift(float(np.sum(sigma[complement])))
        shifted = sigma + c
        cols = list(support)
        S = U[:, cols] @ np.diag(shifted[cols]) @ U[:, cols].T
        degenerate = bool(np.any(np.abs(shifted) <= EIGEN_GAP_RTOL * scale))
        residual = criticality_residual(metric, S, T)
        if residual > RESIDUAL_TOL:
            raise InternalInconsistencyError(
                f"closed-form point for support {support} has residual {residual:.3e}")
        if degenerate:
            warnings.warn(f"support {tuple(i + 1 for i in support)} has a vanishing shifted "
                          f"eigenvalue; index is undefined", PolylandWarning, stacklevel=3)
            index = None
        elif metric.kind in ("frobenius", "gaussian"):
            index = _ratio_index(shifted, support)
        else:
            index = chart_hessian_index(S, T, metric, rank=r)
        points.append(CriticalPoint(S, r, support, index, c, residual, degenerate))
    return points


def ey_frobenius_critical(T, r: int) -> list[CriticalPoint]:
    """The binom(n, r) critical points U Σ_I Uᵀ of ‖S − T‖²_F on rank-r matrices."""
    return _eigen_enumeration(T, r, QuadMetric.frobenius(), lambda rest: 0.0)


def ey_gaussian_critical(T, r: int) -> list[CriticalPoint]:
    """Critical points under the Gaussian norm: eigenvalues on I shifted by c_I = Σ_{I^c} σ / (r+2)."""
    return _eigen_enumeration(T, r, QuadMetric.gaussian(), lambda rest: rest / (r + 2))


def ey_weighted_critical(T, r: int, a: float, b: float) -> list[CriticalPoint]:
    """Critical points for a·tr(ST) + b·tr(S)tr(T); shift c_I = b·Σ_{I^c} σ / (a + b·r).

    Indices come from the chart Hessian.
    """
    metric = QuadMetric.weighted(a, b)
    n = np.atleast_2d(T).shape[0]
    if a + n * b <= 0 or a + r * b == 0:
        raise PreconditionError(f"weighted inner product with a={a}, b={b} is not positive definite for n={n}")
    return _eigen_enumeration(T, r, metric, lambda rest: b * rest / (a + b * r))


def critical_image_cover(T, metric: QuadMetric, r: int) -> list[CriticalPoint]:
    """Images of parameter-space critical points: all stratum critical points of rank ≤ r."""
    if metric.kind == "frobenius":
        enumerate_rank = ey_frobenius_critical
    elif metric.kind == "gaussian":
        enumerate_rank = ey_gaussian_critical
    else:
        raise PreconditionError(f"critical_image_cover supports frobenius and gaussian, got {metric.kind}")
    points = []
    for rank in range(1, r + 1):
        points.extend(enumerate_rank(T, rank))
    return points


# ── iid rank-1 construction ─────────────────────────────────

def _iid_preconditions(t: np.ndarray, mu2: float, mu4: float) -> list[str]:
    n = t.shape[0]
    problems = []
    if mu4 < 10 * n * mu2 ** 2:
        problems.append(f"mu4={mu4} < 10·n·mu2² = {10 * n * mu2 ** 2}")
    if np.any(t <= 0):
        problems.append("teacher eigenvalues must be positive")
    elif t.max() / t.min() > 2:
        problems.append(f"teacher eigenvalue ratio {t.max() / t.min():.4g} exceeds 2")
    if np.unique(t).shape[0] != n:
        problems.append("teacher eigenvalues must be distinct")
    return problems


def iid_constants(t, mu2: float, mu4: float, support, epsilon: int = 1) -> tuple[float, float]:
    """(β, γ) such that v_i² = β + γ t_i on the support."""
    t = np.asarray(t, dtype=float)
    m2 = mu2 ** 2
    gamma = epsilon * (mu4 - m2) / (mu4 - 3 * m2)
    beta = (epsilon * m2 * t.sum() - 3 * m2 * gamma * t[list(support)].sum()) / (mu4 + 3 * (len(support) - 1) * m2)
    return float(beta), float(gamma)


def iid_rank1_critical(t, mu2: float, mu4: float, with_index: bool = True) -> list[CriticalPoint]:
    """Rank-one critical points S = ε·vvᵀ of the iid loss for the teacher diag(t)."""
    t = np.asarray(t, dtype=float).reshape(-1)
    n = t.shape[0]
    m2 = mu2 ** 2
    if mu2 <= 0:
        raise PreconditionError(f"mu2 must be positive, got {mu2}")
    if math.isclose(mu4, 3 * m2, rel_tol=1e-12):
        raise PreconditionError("mu4 = 3·mu2² is the Gaussian boundary; use ey_gaussian_critical")
    problems = _iid_preconditions(t, mu2, mu4)
    guaranteed = not problems
    for problem in problems:
        warnings.warn(f"iid teacher-class assumption violated: {problem}", PolylandWarning, stacklevel=2)

    T = np.diag(t)
    metric = QuadMetric.iid(mu2, mu4)
    points = []
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            for epsilon in (1, -1):
                beta, gamma = iid_constants(t, mu2, mu4, support, epsilon)
                squares = beta + gamma * t[list(support)]
                if np.any(squares <= 0):
                    if epsilon == 1 and guaranteed:
                        raise InternalInconsistencyError(
                            f"β + γ·t_i <= 0 on support {support} under the iid assumptions")
                    continue
                if epsilon == -1 and guaranteed:
                    raise InternalInconsistencyError(f"unexpected ε = -1 critical point on support {support}")
                magnitudes = np.sqrt(squares)
                for tail in itertools.product((1, -1), repeat=size - 1):
                    signs = np.zeros(n, dtype=int)
                    signs[list(support)] = (1,) + tail
                    v = np.zeros(n)
                    v[list(support)] = signs[list(support)] * magnitudes
                    if size == 1 and epsilon == 1:
                        i = support[0]
                        S = np.zeros((n, n))
                        S[i, i] = (m2 * t.sum() - m2 * t[i] + mu4 * t[i]) / mu4
                    else:
                        S = epsilon * np.outer(v, v)
                    residual = criticality_residual(metric, S, T)
                    if residual > RESIDUAL_TOL:
                        raise InternalInconsistencyError(
                            f"iid point on support {support} has residual {residual:.3e}")
                    cert = IIDCriticalCertificate(support, tuple(int(s) for s in signs), epsilon, beta, gamma, v)
                    index = chart_hessian_index(S, T, metric, rank=1) if with_index else None
                    points.append(CriticalPoint(S, 1, support, index, 0.0, residual, False, cert))
    points.sort(key=lambda p: (p.support, tuple(-s for s in p.certificate.signs), -p.certificate.epsilon))
    log.debug("iid enumeration: n=%d, %d points", n, len(points))
    return points


# ── Morse indices ───────────────────────────────────────────

def index_by_focal_count(S, T, metric: QuadMetric) -> int:
    """Morse index as the number of focal points, with multiplicity, on the segment from S to T."""
    from core.discriminant import focal_points_on_segment

    return sum(crossing.multiplicity for crossing in focal_points_on_segment(S, T, metric))


def _chart(S: np.ndarray, rank: int):
    values, vectors = np.linalg.eigh(S)
    order = np.argsort(-np.abs(values))
    values, vectors = values[order], vectors[:, order]
    alpha0 = values[:rank]
    Q = vectors.T                                     # rows: eigenvectors, leading block spans S
    n = S.shape[0]
    pairs = [(i, j) for i in range(rank) for j in range(i + 1, n)]

    def point(x: np.ndarray) -> np.ndarray:
        alpha = alpha0 * (1 + x[:rank])
        K = np.zeros((n, n))
        for (i, j), value in zip(pairs, x[rank:]):
            K[i, j], K[j, i] = value, -value
        U = (expm(K) @ Q)[:rank]
        return U.T @ np.diag(alpha) @ U

    return point, rank + len(pairs)


def _fd_hessian(f, dim: int, h: float) -> np.ndarray:
    H = np.zeros((dim, dim))
    eye = np.eye(dim) * h
    f0 = f(np.zeros(dim))
    for i in range(dim):
        H[i, i] = (f(2 * eye[i]) - 2 * f0 + f(-2 * eye[i])) / (4 * h * h)
        for j in range(i + 1, dim):
            value = (f(eye[i] + eye[j]) - f(eye[i] - eye[j])
                     - f(-eye[i] + eye[j]) + f(-eye[i] - eye[j])) / (4 * h * h)
            H[i, j] = H[j, i] = value
    return H


def chart_hessian_index(S, T, metric: QuadMetric, rank: int | None = None, step: float = 1e-4) -> int:
    """Negative eigenvalues of the loss Hessian in the (α, U) Stiefel chart around S."""
    S, T = _pair(S, T)
    rank = numerical_rank(S) if rank is None else rank
    if rank < 1:
        raise PreconditionError("chart Hessian needs a nonzero critical point")
    point, dim = _chart(S, rank)
    H = _fd_hessian(lambda x: metric.distance_sq(point(x), T), dim, step)
    eigenvalues = np.linalg.eigvalsh(H)
    scale = max(np.abs(eigenvalues).max(), np.finfo(float).tiny)
    return int(np.sum(eigenvalues < -HESSIAN_NEG_RTOL * scale))


# ── Brute-force oracle ──────────────────────────────────────

@dataclass
class SearchResult:
    points: list[CriticalPoint] = field(default_factory=list)
    starts: int = 0
    certified: int = 0


def multistart_critical_search(T, metric: QuadMetric, r: int, starts: int, seed: int,
                               certify_tol: float = 1e-8) -> SearchResult:
    """Solve ∇L(α, W) = 0 from seeded random starts; keep certified, deduplicated images."""
    T = as_symmetric(T)
    n = T.shape[0]
    rng = np.random.default_rng(seed)
    scale = max(1.0, float(np.linalg.norm(T)))
    result = SearchResult(starts=starts)

    def residual(x: np.ndarray) -> np.ndarray:
        params = NetworkParams.from_vector(x, r, n, 2)
        grad_alpha, grad_W = param_gradient(params, metric, T)
        return np.concatenate([grad_alpha, grad_W.ravel()]) / scale

    for _ in range(starts):
        x0 = rng.normal(size=r + r * n) * math.sqrt(scale)
        solution = least_squares(residual, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        params = NetworkParams.from_vector(solution.x, r, n, 2)
        S = params.W.T @ np.diag(params.alpha) @ params.W
        rank = numerical_rank(S, 1e-6)
        # S = 0 is always critical and never reported
        if rank == 0 or np.linalg.norm(S) <= DEDUP_TOL * scale or criticality_residual(metric, S, T) > certify_tol:
            continue
        result.certified += 1
        if any(np.linalg.norm(S - p.S) <= DEDUP_TOL * scale for p in result.points):
            continue
        result.points.append(CriticalPoint(S, rank, (), None, residual=criticality_residual(metric, S, T)))
    return result
