"""
Moment tensors and the inner products they induce on Sym^d(R^n).

For data x ~ D the induced inner product is <g, h>_D = E[g(x) h(x)] =
<S ⊗ T, M_{D,2d}>_F with M_{D,2d} = E[x^{⊗2d}]. MetricOperator stores it as a
Gram matrix on packed coordinates (multiplicity weights baked in), so that
inner(S, T) = s^T G t.

Supported families:
  • RotInvariant    - E[ρ^{2d}] · sym(I^{⊗d}), scaled so the standard Gaussian
                      gives Gaussian moments
  • IID             - entries Π_j μ_{k_j} (k = exponent vector)
  • ColoredGaussian - sym(Σ^{⊗d}) through Isserlis pairings
  • Mixture         - convex combination of the parts
  • Empirical       - (1/N) Σ x_i^{⊗2d}
"""
import functools
import io
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from config import RANK_RTOL
from core.errors import PreconditionError, SchemaError, ShapeError
from core.symtensor import (
    SymTensor, exponent_array, index_array, monomial_features, multi_indices,
    multinomial_weights, packed_dim, position_map,
)


def _double_factorial(k: int) -> int:
    """k!! with (-1)!! = 0!! = 1."""
    return math.prod(range(k, 0, -2))


# ── Moment specifications ───────────────────────────────────

@dataclass(frozen=True)
class RotInvariant:
    radial_moment_2d: float  # E[ρ^{2d}], ρ = ‖x‖

    def __post_init__(self):
        if self.radial_moment_2d < 0:
            raise PreconditionError(f"even radial moment must be >= 0, got {self.radial_moment_2d}")


@dataclass(frozen=True)
class IID:
    moments: tuple  # μ_0, μ_1, ..., μ_{2d}

    def __post_init__(self):
        moments = tuple(float(m) for m in self.moments)
        if not moments or moments[0] != 1.0:
            raise PreconditionError("iid moment list must start with μ_0 = 1")
        for s in range(2, len(moments), 2):
            if moments[s] < 0:
                raise PreconditionError(f"even moment μ_{s} = {moments[s]} is negative")
        object.__setattr__(self, "moments", moments)

    @property
    def mu2(self) -> float:
        return self.moments[2] if len(self.moments) > 2 else 0.0

    @property
    def mu4(self) -> float:
        return self.moments[4] if len(self.moments) > 4 else 0.0

    @classmethod
    def standard_gaussian(cls, max_order: int = 16) -> "IID":
        return cls(tuple(float(_double_factorial(s - 1)) if s % 2 == 0 else 0.0
                         for s in range(max_order + 1)))

    @classmethod
    def uniform(cls, half_width: float = 1.0, max_order: int = 16) -> "IID":
        """Coordinates uniform on [-h, h]: μ_s = h^s / (s+1) for even s."""
        return cls(tuple(half_width ** s / (s + 1) if s % 2 == 0 else 0.0
                         for s in range(max_order + 1)))


@dataclass(frozen=True, eq=False)
class ColoredGaussian:
    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ShapeError(f"Σ must be square, got shape {sigma.shape}")
        scale = max(1.0, float(np.abs(sigma).max(initial=0.0)))
        if not np.allclose(sigma, sigma.T, atol=1e-12 * scale):
            raise PreconditionError("Σ must be symmetric")
        if np.linalg.eigvalsh(sigma).min(initial=0.0) < -1e-12 * scale:
            raise PreconditionError("Σ must be positive semidefinite")
        sigma.flags.writeable = False
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True)
class Mixture:
    weights: tuple
    parts: tuple

    def __post_init__(self):
        weights = tuple(float(g) for g in self.weights)
        if len(weights) != len(self.parts) or not weights:
            raise PreconditionError("mixture needs one weight per part")
        if min(weights) < 0 or abs(sum(weights) - 1.0) > 1e-12:
            raise PreconditionError(f"mixture weights must lie on the simplex, got {weights}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "parts", tuple(self.parts))


@dataclass(frozen=True, eq=False)
class Empirical:
    points: np.ndarray

    def __post_init__(self):
        points = np.atleast_2d(np.array(self.points, dtype=float))
        if points.shape[0] == 0 or points.size == 0:
            raise PreconditionError("empirical distribution needs at least one point")
        points.flags.writeable = False
        object.__setattr__(self, "points", points)


MomentSpec = Union[RotInvariant, IID, ColoredGaussian, Mixture, Empirical]


# ── Moment tensors ──────────────────────────────────────────

def rot_invariant_scale(n: int, d: int) -> float:
    """E‖g‖^{2d} for g ~ N(0, I_n): n(n+2)...(n+2d-2)."""
    return float(np.prod([n + 2 * k for k in range(d)]))


@functools.lru_cache(maxsize=None)
def _pairings(order: int) -> tuple:
    """All perfect matchings of positions 0..order-1."""
    def build(items):
        if not items:
            return [()]
        first, rest = items[0], items[1:]
        out = []
        for j, partner in enumerate(rest):
            remaining = rest[:j] + rest[j + 1:]
            out.extend(((first, partner),) + tail for tail in build(remaining))
        return out
    return tuple(build(tuple(range(order))))


def _isserlis(sigma: np.ndarray, n: int, order: int) -> np.ndarray:
    idx = index_array(n, order)
    total = np.zeros(idx.shape[0])
    for matching in _pairings(order):
        term = np.ones(idx.shape[0])
        for a, b in matching:
            term *= sigma[idx[:, a], idx[:, b]]
        total += term
    return total


def _gaussian_entries(n: int, order: int) -> np.ndarray:
    exps = exponent_array(n, order)
    odd = (exps % 2).any(axis=1)
    table = np.array([_double_factorial(k - 1) for k in range(order + 1)], dtype=float)
    entries = np.prod(table[exps], axis=1)
    return np.where(odd, 0.0, entries)


def moment_tensor(spec: MomentSpec, n: int, d: int) -> SymTensor:
    """M_{D,2d} = E[x^{⊗2d}] for the described distribution."""
    if n < 1 or d < 1:
        raise ShapeError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    order = 2 * d

    if isinstance(spec, RotInvariant):
        scale = spec.radial_moment_2d / rot_invariant_scale(n, d)
        return SymTensor(n, order, scale * _gaussian_entries(n, order))

    if isinstance(spec, IID):
        if len(spec.moments) < order + 1:
            raise PreconditionError(f"iid spec lists moments up to {len(spec.moments) - 1}, need {order}")
        mu = np.asarray(spec.moments)
        return SymTensor(n, order, np.prod(mu[exponent_array(n, order)], axis=1))

    if isinstance(spec, ColoredGaussian):
        if spec.sigma.shape != (n, n):
            raise ShapeError(f"Σ has shape {spec.sigma.shape}, expected ({n}, {n})")
        return SymTensor(n, order, _isserlis(spec.sigma, n, order))

    if isinstance(spec, Mixture):
        coeffs = np.zeros(packed_dim(n, order))
        for weight, part in zip(spec.weights, spec.parts):
            coeffs += weight * moment_tensor(part, n, d).coeffs
        return SymTensor(n, order, coeffs)

    if isinstance(spec, Empirical):
        if spec.points.shape[1] != n:
            raise ShapeError(f"points live in R^{spec.points.shape[1]}, expected R^{n}")
        return SymTensor(n, order, monomial_features(spec.points, order).mean(axis=0))

    raise SchemaError(f"unknown moment spec {type(spec).__name__}")


# ── Metric operators ────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class MetricOperator:
    """Symmetric bilinear form on packed Sym^d(R^n)."""

    n: int
    d: int
    gram: np.ndarray

    def __post_init__(self):
        gram = np.array(self.gram, dtype=float)
        dim = packed_dim(self.n, self.d)
        if gram.shape != (dim, dim):
            raise ShapeError(f"Gram must be {dim}x{dim}, got {gram.shape}")
        gram = 0.5 * (gram + gram.T)
        gram.flags.writeable = False
        object.__setattr__(self, "gram", gram)

    def _check(self, T: SymTensor):
        if (T.n, T.d) != (self.n, self.d):
            raise ShapeError(f"metric acts on Sym^{self.d}(R^{self.n}), got Sym^{T.d}(R^{T.n})")

    def inner(self, S: SymTensor, T: SymTensor) -> float:
        self._check(S)
        self._check(T)
        return float(S.coeffs @ self.gram @ T.coeffs)

    def norm_sq(self, S: SymTensor) -> float:
        return self.inner(S, S)

    def distance_sq(self, S: SymTensor, T: SymTensor) -> float:
        return self.norm_sq(S - T)

    def gradient(self, S: SymTensor, T: SymTensor) -> np.ndarray:
        """Gradient of distance_sq(·, T) at S in packed coordinates."""
        self._check(S)
        self._check(T)
        return 2.0 * self.gram @ (S.coeffs - T.coeffs)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.gram)

    def is_psd(self, tol: float = 1e-10) -> bool:
        scale = max(1.0, float(np.abs(self.gram).max(initial=0.0)))
        return bool(self.eigenvalues().min() >= -tol * scale)

    def to_csv(self, path=None, float_format: str = "%.17g") -> str:
        """Gram matrix as CSV with 1-based multi-index labels; returns the text."""
        labels = ["".join(str(i + 1) for i in index) for index in multi_indices(self.n, self.d)]
        buffer = io.StringIO()
        np.savetxt(buffer, self.gram, delimiter=",", fmt=float_format,
                   header=",".join(labels), comments="")
        text = buffer.getvalue()
        if path:
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        return text


@functools.lru_cache(maxsize=None)
def _merge_table(n: int, d: int) -> np.ndarray:
    """table[a, b] = packed position of sorted(I_a + I_b) in degree 2d."""
    pos = position_map(n, 2 * d)
    indices = multi_indices(n, d)
    table = np.array([[pos[tuple(sorted(a + b))] for b in indices] for a in indices], dtype=np.intp)
    table.flags.writeable = False
    return table


def metric_from_moments(M: SymTensor) -> MetricOperator:
    """Gram of (S, T) ↦ <S ⊗ T, M>_F."""
    if M.d % 2:
        raise ShapeError(f"moment tensor must have even degree, got {M.d}")
    d = M.d // 2
    w = multinomial_weights(M.n, d)
    return MetricOperator(M.n, d, np.outer(w, w) * M.coeffs[_merge_table(M.n, d)])


def frobenius_metric(n: int, d: int) -> MetricOperator:
    return MetricOperator(n, d, np.diag(multinomial_weights(n, d)))


def metric_from_spec(spec: MomentSpec, n: int, d: int) -> MetricOperator:
    return metric_from_moments(moment_tensor(spec, n, d))


def _points(points, n: int | None = None) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.size == 0:
        raise PreconditionError("point list is empty")
    if n is not None and points.shape[1] != n:
        raise ShapeError(f"points live in R^{points.shape[1]}, expected R^{n}")
    return points


def erm_inner(points, S: SymTensor, T: SymTensor) -> float:
    """(1/N) Σ p_S(x_i) p_T(x_i)."""
    if (S.n, S.d) != (T.n, T.d):
        raise ShapeError("erm_inner needs tensors of the same shape")
    features = monomial_features(_points(points, S.n), S.d)
    return float(np.mean((features @ S.polynomial_coefficients()) * (features @ T.polynomial_coefficients())))


def erm_nondegenerate(points, n: int, d: int) -> bool:
    """True iff no nonzero degree-d form vanishes on all points (numerical rank test)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.size == 0 or points.shape[1] != n:
        return False
    evaluation = monomial_features(points, d) * multinomial_weights(n, d)
    singular = np.linalg.svd(evaluation, compute_uv=False)
    if singular.size == 0 or singular[0] == 0:
        return False
    return int(np.sum(singular > RANK_RTOL * singular[0])) == packed_dim(n, d)


def iid_quadratic_inner(S, T, mu2: float, mu4: float) -> float:
    """Closed form of the iid inner product on symmetric matrices (d = 2)."""
    S, T = np.asarray(S, dtype=float), np.asarray(T, dtype=float)
    return float(2 * mu2 ** 2 * np.trace(S @ T) + mu2 ** 2 * np.trace(S) * np.trace(T)
                 + (mu4 - 3 * mu2 ** 2) * np.dot(np.diag(S), np.diag(T)))


# ── JSON form ───────────────────────────────────────────────

def spec_from_dict(payload: dict) -> MomentSpec:
    kind = payload.get("kind") if isinstance(payload, dict) else None
    try:
        if kind == "rot_invariant":
            return RotInvariant(float(payload["radial_moment_2d"]))
        if kind == "iid":
            law = payload.get("law")
            if law == "gaussian":
                return IID.standard_gaussian(int(payload.get("max_order", 16)))
            if law == "uniform":
                return IID.uniform(float(payload.get("half_width", 1.0)), int(payload.get("max_order", 16)))
            return IID(tuple(payload["moments"]))
        if kind == "colored_gaussian":
            return ColoredGaussian(np.asarray(payload["sigma"], dtype=float))
        if kind == "mixture":
            return Mixture(tuple(payload["weights"]), tuple(spec_from_dict(p) for p in payload["parts"]))
        if kind == "empirical":
            return Empirical(np.asarray(payload["points"], dtype=float))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, PreconditionError):
            raise
        raise SchemaError(f"malformed {kind} moment spec: {e}") from e
    raise SchemaError(f"unknown moment spec kind: {kind!r}")


def spec_to_dict(spec: MomentSpec) -> dict:
    if isinstance(spec, RotInvariant):
        return {"kind": "rot_invariant", "radial_moment_2d": spec.radial_moment_2d}
    if isinstance(spec, IID):
        return {"kind": "iid", "moments": list(spec.moments)}
    if isinstance(spec, ColoredGaussian):
        return {"kind": "colored_gaussian", "sigma": spec.sigma.tolist()}
    if isinstance(spec, Mixture):
        return {"kind": "mixture", "weights": list(spec.weights),
                "parts": [spec_to_dict(p) for p in spec.parts]}
    if isinstance(spec, Empirical):
        return {"kind": "empirical", "points": spec.points.tolist()}
    raise SchemaError(f"unknown moment spec {type(spec).__name__}")
