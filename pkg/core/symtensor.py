"""
Symmetric tensors Sym^d(R^n) in packed storage.

A tensor is stored once per sorted multi-index, in the lexicographic order of
itertools.combinations_with_replacement. The full entry T[i_1..i_d] equals the
packed coefficient of sorted(i_1..i_d). Frobenius products weight every packed
coefficient by its multinomial multiplicity d!/(k_1!...k_n!), so

    <T, S>_F = sum_I w_I T_I S_I,      p_T(x) = <T, x^{⊗d}>_F = sum_I w_I T_I x^I.

Multi-indices are 0-based in Python and 1-based in JSON documents.
"""
import functools
import itertools
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from config import SCHEMA
from core.errors import PreconditionError, SchemaError, ShapeError


# ── Index tables (cached per shape) ─────────────────────────

def packed_dim(n: int, d: int) -> int:
    """dim Sym^d(R^n) = binom(n+d-1, d)."""
    return int(comb(n + d - 1, d, exact=True))


@functools.lru_cache(maxsize=None)
def multi_indices(n: int, d: int) -> tuple[tuple[int, ...], ...]:
    return tuple(itertools.combinations_with_replacement(range(n), d))


@functools.lru_cache(maxsize=None)
def index_array(n: int, d: int) -> np.ndarray:
    """(dim, d) integer array of sorted multi-indices."""
    arr = np.array(multi_indices(n, d), dtype=np.intp).reshape(packed_dim(n, d), d)
    arr.flags.writeable = False
    return arr


@functools.lru_cache(maxsize=None)
def exponent_array(n: int, d: int) -> np.ndarray:
    """(dim, n) exponent vectors k with sum(k) = d."""
    idx = index_array(n, d)
    exps = np.zeros((idx.shape[0], n), dtype=np.intp)
    for col in range(d):
        np.add.at(exps, (np.arange(idx.shape[0]), idx[:, col]), 1)
    exps.flags.writeable = False
    return exps


def _multinomial(index: tuple[int, ...]) -> int:
    value = math.factorial(len(index))
    for count in Counter(index).values():
        value //= math.factorial(count)
    return value


@functools.lru_cache(maxsize=None)
def multinomial_weights(n: int, d: int) -> np.ndarray:
    weights = np.array([_multinomial(index) for index in multi_indices(n, d)], dtype=float)
    weights.flags.writeable = False
    return weights


@functools.lru_cache(maxsize=None)
def position_map(n: int, d: int) -> dict[tuple[int, ...], int]:
    return {index: pos for pos, index in enumerate(multi_indices(n, d))}


@functools.lru_cache(maxsize=None)
def full_to_packed(n: int, d: int) -> np.ndarray:
    """Packed position of every full index (i_1..i_d) in C order."""
    pos = position_map(n, d)
    table = np.fromiter(
        (pos[tuple(sorted(full))] for full in itertools.product(range(n), repeat=d)),
        dtype=np.intp, count=n ** d,
    )
    table.flags.writeable = False
    return table


# ── SymTensor ───────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SymTensor:
    """Element of Sym^d(R^n); immutable."""

    n: int
    d: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ShapeError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")
        coeffs = np.array(self.coeffs, dtype=float).reshape(-1)
        if coeffs.shape[0] != packed_dim(self.n, self.d):
            raise ShapeError(
                f"packed length {coeffs.shape[0]} != binom(n+d-1, d) = {packed_dim(self.n, self.d)}")
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    # constructors
    @classmethod
    def zeros(cls, n: int, d: int) -> "SymTensor":
        return cls(n, d, np.zeros(packed_dim(n, d)))

    @classmethod
    def from_dense(cls, array) -> "SymTensor":
        """Pack a dense order-d array, averaging over index permutations."""
        array = np.asarray(array, dtype=float)
        d = array.ndim
        if d < 1 or len(set(array.shape)) != 1:
            raise ShapeError(f"dense tensor must be cubical, got shape {array.shape}")
        n = array.shape[0]
        sums = np.bincount(full_to_packed(n, d), weights=array.ravel(),
                           minlength=packed_dim(n, d))
        return cls(n, d, sums / multinomial_weights(n, d))

    @classmethod
    def from_polynomial_coefficients(cls, n: int, d: int, coefficients) -> "SymTensor":
        """Tensor whose polynomial has the given monomial coefficients (packed order)."""
        return cls(n, d, np.asarray(coefficients, dtype=float) / multinomial_weights(n, d))

    # views
    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    def to_dense(self) -> np.ndarray:
        return self.coeffs[full_to_packed(self.n, self.d)].reshape((self.n,) * self.d)

    def polynomial_coefficients(self) -> np.ndarray:
        return multinomial_weights(self.n, self.d) * self.coeffs

    def norm(self) -> float:
        return float(np.sqrt(frobenius_inner(self, self)))

    def allclose(self, other: "SymTensor", rtol=1e-12, atol=1e-12) -> bool:
        _check_same_shape(self, other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=rtol, atol=atol))

    # arithmetic
    def __add__(self, other: "SymTensor") -> "SymTensor":
        _check_same_shape(self, other)
        return SymTensor(self.n, self.d, self.coeffs + other.coeffs)

    def __sub__(self, other: "SymTensor") -> "SymTensor":
        _check_same_shape(self, other)
        return SymTensor(self.n, self.d, self.coeffs - other.coeffs)

    def __neg__(self) -> "SymTensor":
        return SymTensor(self.n, self.d, -self.coeffs)

    def __mul__(self, scalar: float) -> "SymTensor":
        return SymTensor(self.n, self.d, float(scalar) * self.coeffs)

    __rmul__ = __mul__

    # serialization
    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "kind": "symtensor",
            "n": self.n,
            "d": self.d,
            "coeffs": [[[i + 1 for i in index], float(value)]
                       for index, value in zip(multi_indices(self.n, self.d), self.coeffs)],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SymTensor":
        try:
            n, d = int(payload["n"]), int(payload["d"])
            entries = payload["coeffs"]
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"symtensor document needs n, d, coeffs: {e}") from e
        if n < 1 or d < 1:
            raise SchemaError(f"symtensor document has n={n}, d={d}")
        pos = position_map(n, d)
        coeffs = np.zeros(packed_dim(n, d))
        for index, value in entries:
            key = tuple(sorted(int(i) - 1 for i in index))
            if len(key) != d or key not in pos:
                raise SchemaError(f"multi-index {index} is not a degree-{d} index over 1..{n}")
            coeffs[pos[key]] = float(value)
        return cls(n, d, coeffs)


def _check_same_shape(S: SymTensor, T: SymTensor):
    if (S.n, S.d) != (T.n, T.d):
        raise ShapeError(f"shape mismatch: Sym^{S.d}(R^{S.n}) vs Sym^{T.d}(R^{T.n})")


def _as_vector(x, n: int, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ShapeError(f"{name} must have shape ({n},), got {x.shape}")
    return x


# ── Operations ──────────────────────────────────────────────

def rank_one(v, lam: float, d: int) -> SymTensor:
    """λ·v^{⊗d}."""
    if d < 1:
        raise PreconditionError(f"degree must be >= 1, got {d}")
    v = np.asarray(v, dtype=float).reshape(-1)
    return SymTensor(v.shape[0], d, lam * np.prod(v[index_array(v.shape[0], d)], axis=1))


def frobenius_inner(S: SymTensor, T: SymTensor) -> float:
    _check_same_shape(S, T)
    return float(np.dot(multinomial_weights(S.n, S.d), S.coeffs * T.coeffs))


def monomial_features(points, d: int) -> np.ndarray:
    """(N, dim) matrix of monomials x^I for every point, in packed order."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return np.prod(points[:, index_array(points.shape[1], d)], axis=2)


def evaluate_poly(T: SymTensor, x) -> float:
    x = _as_vector(x, T.n)
    return float(np.dot(T.polynomial_coefficients(), np.prod(x[index_array(T.n, T.d)], axis=1)))


def sym_outer(w, u, d: int) -> SymTensor:
    """Unnormalized symmetrization of w^{⊗(d-1)} ⊗ u (d terms)."""
    if d < 1:
        raise PreconditionError(f"degree must be >= 1, got {d}")
    w = np.asarray(w, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if w.shape != u.shape:
        raise ShapeError(f"sym_outer needs equal lengths, got {w.shape} and {u.shape}")
    idx = index_array(w.shape[0], d)
    wf, uf = w[idx], u[idx]
    total = np.zeros(idx.shape[0])
    for slot in range(d):
        factors = wf.copy()
        factors[:, slot] = uf[:, slot]
        total += factors.prod(axis=1)
    return SymTensor(w.shape[0], d, total)


def gradient_poly(T: SymTensor, x) -> np.ndarray:
    """∇p_T(x), using <T, sym_outer(x, e_j, d)>_F = ∂_j p_T(x)."""
    x = _as_vector(x, T.n)
    eye = np.eye(T.n)
    return np.array([frobenius_inner(T, sym_outer(x, eye[j], T.d)) for j in range(T.n)])


def matricize_2d(M: SymTensor) -> np.ndarray:
    """n^d x n^d unfolding of a degree-2d tensor; rows (i_1..i_d), columns (i_{d+1}..i_{2d})."""
    if M.d % 2:
        raise ShapeError(f"matricize_2d needs even degree, got {M.d}")
    side = M.n ** (M.d // 2)
    return M.to_dense().reshape(side, side)
