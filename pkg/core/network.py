"""
Shallow polynomial networks f(x) = Σ α_i (w_i·x)^d and their parameterization map.

tau sends weights (α, W) to the symmetric tensor Σ α_i w_i^{⊗d}; d_tau is its
Jacobian on packed coordinates, with parameter vector ordering
(α_1..α_r, w_11..w_1n, ..., w_r1..w_rn).
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from config import EXCEPTIONAL_THICK, NULLITY_RTOL, RANK_RTOL, SCHEMA, WITNESS_TOL
from core.errors import PreconditionError, SchemaError, ShapeError
from core.symtensor import (
    SymTensor, gradient_poly, index_array, multinomial_weights, packed_dim,
    rank_one, sym_outer,
)


# ── Parameters ──────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class NetworkParams:
    alpha: np.ndarray
    W: np.ndarray
    d: int

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float).reshape(-1)
        W = np.atleast_2d(np.array(self.W, dtype=float))
        if W.shape[0] != alpha.shape[0]:
            raise ShapeError(f"len(alpha)={alpha.shape[0]} but W has {W.shape[0]} rows")
        if self.d < 1:
            raise PreconditionError(f"degree must be >= 1, got {self.d}")
        alpha.flags.writeable = False
        W.flags.writeable = False
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "W", W)

    @property
    def r(self) -> int:
        return self.alpha.shape[0]

    @property
    def n(self) -> int:
        return self.W.shape[1]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.W.ravel()])

    @classmethod
    def from_vector(cls, vector, r: int, n: int, d: int) -> "NetworkParams":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (r + r * n,):
            raise ShapeError(f"parameter vector must have length {r + r * n}, got {vector.shape}")
        return cls(vector[:r], vector[r:].reshape(r, n), d)

    def norm(self) -> float:
        return float(np.linalg.norm(self.to_vector()))

    def deltas(self) -> np.ndarray:
        """Per-neuron invariants α_i² − ‖w_i‖²/d."""
        return self.alpha ** 2 - np.sum(self.W ** 2, axis=1) / self.d

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "kind": "network_params", "d": self.d,
                "alpha": self.alpha.tolist(), "W": self.W.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "NetworkParams":
        try:
            return cls(np.asarray(payload["alpha"], dtype=float),
                       np.asarray(payload["W"], dtype=float), int(payload["d"]))
        except (KeyError, TypeError) as e:
            raise SchemaError(f"network params document needs alpha, W, d: {e}") from e


def evaluate(params: NetworkParams, X) -> np.ndarray:
    """Network outputs on a batch (rows of X)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.n:
        raise ShapeError(f"inputs live in R^{X.shape[1]}, network expects R^{params.n}")
    return ((X @ params.W.T) ** params.d) @ params.alpha


def apply_trivial_symmetry(params: NetworkParams, perm, scales) -> NetworkParams:
    """(P D^{-d} α, P D W): same tau for any permutation and nonzero diagonal D."""
    perm = np.asarray(perm, dtype=np.intp)
    scales = np.asarray(scales, dtype=float)
    if sorted(perm.tolist()) != list(range(params.r)) or scales.shape != (params.r,):
        raise PreconditionError("perm must permute range(r) and scales must have length r")
    if np.any(scales == 0):
        raise PreconditionError("scales must be nonzero")
    alpha = params.alpha * scales ** (-params.d)
    W = params.W * scales[:, None]
    return NetworkParams(alpha[perm], W[perm], params.d)


# ── Parameterization map ────────────────────────────────────

def _powers(params: NetworkParams) -> np.ndarray:
    """(r, dim) array of w_i^I."""
    return np.prod(params.W[:, index_array(params.n, params.d)], axis=2)


def tau(params: NetworkParams) -> SymTensor:
    """Σ α_i w_i^{⊗d}."""
    return SymTensor(params.n, params.d, params.alpha @ _powers(params))


def d_tau(params: NetworkParams) -> np.ndarray:
    """Jacobian of tau, shape (dim Sym^d, r + r·n)."""
    n, d = params.n, params.d
    eye = np.eye(n)
    columns = [rank_one(w, 1.0, d).coeffs for w in params.W]
    for i, w in enumerate(params.W):
        columns.extend(params.alpha[i] * sym_outer(w, eye[j], d).coeffs for j in range(n))
    return np.column_stack(columns)


def pullback(params: NetworkParams, g) -> tuple[np.ndarray, np.ndarray]:
    """d_tau(params)^T g without forming the Jacobian; returns (∇α, ∇W)."""
    n, d = params.n, params.d
    g = np.asarray(g, dtype=float)
    idx = index_array(n, d)
    factors = params.W[:, idx]                       # (r, dim, d)
    grad_alpha = np.prod(factors, axis=2) @ g
    grad_W = np.zeros_like(params.W)
    rows = np.arange(idx.shape[0])
    for slot in range(d):
        others = np.prod(np.delete(factors, slot, axis=2), axis=2)   # (r, dim)
        onehot = np.zeros((idx.shape[0], n))
        onehot[rows, idx[:, slot]] = 1.0
        grad_W += (others * g) @ onehot
    return grad_alpha, params.alpha[:, None] * grad_W


def numerical_rank(matrix, rtol: float = RANK_RTOL) -> int:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular[0] == 0:
        return 0
    return int(np.sum(singular > rtol * singular[0]))


# ── Critical and branch loci ────────────────────────────────

@dataclass(frozen=True)
class CritLocusResult:
    in_crit: bool
    rank: int
    witness: SymTensor | None = None
    witness_residual: float | None = None

    def to_dict(self) -> dict:
        return {"in_crit": self.in_crit, "rank": self.rank,
                "witness": self.witness.to_dict() if self.witness is not None else None,
                "witness_residual": self.witness_residual}


def crit_locus_test(params: NetworkParams, tol: float = WITNESS_TOL) -> CritLocusResult:
    """Rank test on d_tau; a witness P with ∇P(w_i) = 0 when the image is not all of Sym^d."""
    jac = d_tau(params)
    dim, cols = jac.shape
    if not np.any(jac):
        rank, left = 0, np.eye(dim)
    else:
        U, singular, _ = np.linalg.svd(jac)
        rank = int(np.sum(singular > RANK_RTOL * singular[0]))
        left = U[:, rank:]
    in_crit = rank < min(dim, cols)
    if rank >= dim:
        return CritLocusResult(in_crit, rank)

    # u ⟂ image in coordinates means <P, column>_F = 0 for P = u / weights
    witness = left[:, 0] / multinomial_weights(params.n, params.d)
    witness = SymTensor(params.n, params.d, witness)
    witness = witness * (1.0 / witness.norm())
    active = [w for a, w in zip(params.alpha, params.W) if a != 0]
    residual = max((float(np.linalg.norm(gradient_poly(witness, w))) for w in active), default=0.0)
    if residual > tol:
        # a left-null direction is always a witness; a large residual means a bad rank call
        return CritLocusResult(in_crit, rank, None, residual)
    return CritLocusResult(in_crit, rank, witness, residual)


def _catalecticant(T: SymTensor) -> np.ndarray:
    """Middle Hankel matrix of a binary form: entries T_{(i+j)} with i+j copies of index 2."""
    half = T.d // 2
    entry = {int(k): c for k, c in zip(index_array(2, T.d).sum(axis=1), T.coeffs)}
    return np.array([[entry[i + j] for j in range(T.d - half + 1)] for i in range(half + 1)])


def branch_membership(T: SymTensor) -> bool:
    """Branch-locus test for d = 2 (rank ≤ n−1) or n = 2 (catalecticant rank ≤ ⌊d/2⌋).

    The binary test is a necessary condition only.
    """
    if T.d == 2:
        return numerical_rank(T.to_dense()) <= T.n - 1
    if T.n == 2:
        return numerical_rank(_catalecticant(T)) <= T.d // 2
    raise ShapeError(f"branch membership is only decided for d = 2 or n = 2, got d={T.d}, n={T.n}")


# ── Width regimes ───────────────────────────────────────────

REGIME_ORDER = ("low_dimensional", "thick", "thick_or_filling", "filling")


@dataclass(frozen=True)
class RegimeReport:
    d: int
    n: int
    r: int
    r_thick: int
    r_fill_lower: int
    r_fill_upper: int
    r_fill_exact: int | None
    regime: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, payload: dict) -> "RegimeReport":
        return cls(**{k: payload[k] for k in cls.__dataclass_fields__})


def r_thick(d: int, n: int) -> int:
    # quadratic forms: thickness and filling both need the full signature, so r = n
    if d == 2:
        return n
    dim = int(comb(n + d - 1, d, exact=True))
    value = -(-dim // n)
    return value + 1 if (d, n) in EXCEPTIONAL_THICK else value


def regime(d: int, n: int, r: int) -> RegimeReport:
    if d < 2 or n < 1 or r < 0:
        raise PreconditionError(f"regime needs d >= 2, n >= 1, r >= 0; got d={d}, n={n}, r={r}")
    thick = r_thick(d, n)
    exact = None
    if d == 2:
        exact = n
    elif n == 2:
        exact = d
    elif n == 1:
        exact = 1
    lower, upper = (exact, exact) if exact is not None else (thick, 2 * thick)

    if r < thick:
        label = "low_dimensional"
    elif r >= upper:
        label = "filling"
    elif exact is not None:
        label = "thick"
    else:
        label = "thick_or_filling"
    return RegimeReport(d, n, r, thick, lower, upper, exact, label)


# ── Fibers (d = 2) ──────────────────────────────────────────

@dataclass(frozen=True)
class SignatureTriple:
    s_plus: int
    s_minus: int
    s_zero: int

    def __post_init__(self):
        if min(self.s_plus, self.s_minus, self.s_zero) < 0:
            raise PreconditionError("signature entries must be nonnegative")

    @property
    def n(self) -> int:
        return self.s_plus + self.s_minus + self.s_zero

    @property
    def rank(self) -> int:
        return self.s_plus + self.s_minus

    @classmethod
    def of_matrix(cls, S, rtol: float = RANK_RTOL) -> "SignatureTriple":
        eigenvalues = np.linalg.eigvalsh(np.asarray(S, dtype=float))
        cut = rtol * max(np.abs(eigenvalues).max(initial=0.0), np.finfo(float).tiny)
        plus = int(np.sum(eigenvalues > cut))
        minus = int(np.sum(eigenvalues < -cut))
        return cls(plus, minus, eigenvalues.shape[0] - plus - minus)


def fiber_components(sig: SignatureTriple, r: int) -> int:
    """Number of connected components of τ_r^{-1}(S) for S of signature sig."""
    rank = sig.rank
    if rank > r:
        return 0
    if rank < r:
        return 1
    if sig.s_plus == 0 or sig.s_minus == 0:
        return 2
    return 4 * int(comb(r, sig.s_plus, exact=True))


# ── Stiefel chart ───────────────────────────────────────────

@dataclass(frozen=True)
class NullityReport:
    predicted: int
    numeric: int


def stiefel_nullity_check(alpha, U, step: float = 1e-4) -> NullityReport:
    """Nullity of d(α, U) ↦ U^T diag(α) U on R^r × tangent space of the Stiefel manifold."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    r, n = U.shape
    if alpha.shape != (r,):
        raise ShapeError(f"alpha has length {alpha.shape[0]}, U has {r} rows")
    if r > n or not np.allclose(U @ U.T, np.eye(r), atol=1e-10):
        raise PreconditionError("U must have orthonormal rows")
    predicted = sum(1 for i in range(r) for j in range(i + 1, r) if alpha[i] == alpha[j])

    complement = np.linalg.svd(U)[2][r:]           # (n-r, n) orthonormal complement
    tangents = []
    for i in range(r):
        for j in range(i + 1, r):
            skew = np.zeros((r, r))
            skew[i, j], skew[j, i] = 1.0, -1.0
            tangents.append(skew @ U)
    for i in range(r):
        for k in range(n - r):
            direction = np.zeros((r, n))
            direction[i] = complement[k]
            tangents.append(direction)

    upper = np.triu_indices(n)

    def rho(a, V):
        return (V.T @ np.diag(a) @ V)[upper]

    columns = []
    for i in range(r):
        e = np.zeros(r)
        e[i] = step
        columns.append((rho(alpha + e, U) - rho(alpha - e, U)) / (2 * step))
    for V in tangents:
        columns.append((rho(alpha, U + step * V) - rho(alpha, U - step * V)) / (2 * step))
    jac = np.column_stack(columns)
    numeric = jac.shape[1] - numerical_rank(jac, NULLITY_RTOL)
    return NullityReport(predicted, numeric)
