import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.errors import PreconditionError, SchemaError, ShapeError
from core.metrics import (
    IID, ColoredGaussian, Empirical, Mixture, RotInvariant, erm_inner, erm_nondegenerate,
    frobenius_metric, iid_quadratic_inner, metric_from_moments, metric_from_spec, moment_tensor,
    rot_invariant_scale, spec_from_dict, spec_to_dict,
)
from core.symtensor import (
    SymTensor, frobenius_inner, matricize_2d, monomial_features, multinomial_weights, packed_dim, position_map,
    rank_one,
)

GAUSSIAN_MAT = [[3, 0, 0, 1], [0, 1, 1, 0], [0, 1, 1, 0], [1, 0, 0, 3]]


def _random_symmetric(rng, n):
    A = rng.normal(size=(n, n))
    return (A + A.T) / 2


# ── Moment tensors ──

def test_gaussian_moment_tensor():
    assert_allclose(matricize_2d(moment_tensor(IID.standard_gaussian(4), 2, 2)), GAUSSIAN_MAT)


def test_colored_gaussian_identity():
    M = moment_tensor(ColoredGaussian(np.eye(2)), 2, 2)
    assert_allclose(matricize_2d(M), GAUSSIAN_MAT)


def test_rot_invariant_scaled_to_gaussian():
    for n, d in [(2, 2), (3, 2), (2, 3)]:
        rot = moment_tensor(RotInvariant(rot_invariant_scale(n, d)), n, d)
        gauss = moment_tensor(IID.standard_gaussian(2 * d), n, d)
        assert rot.allclose(gauss)


def test_rot_invariant_is_sym_identity():
    M = moment_tensor(RotInvariant(rot_invariant_scale(3, 2)), 3, 2).to_dense()
    delta = np.eye(3)
    expected = (np.einsum("ij,kl->ijkl", delta, delta) + np.einsum("ik,jl->ijkl", delta, delta)
                + np.einsum("il,jk->ijkl", delta, delta))
    assert_allclose(M, expected)


def test_iid_entries():
    mu2, mu4 = 0.7, 2.9
    M = moment_tensor(IID((1.0, 0.0, mu2, 0.0, mu4)), 2, 2)
    pos = position_map(2, 4)
    assert M.coeffs[pos[(0, 0, 0, 0)]] == pytest.approx(mu4)
    assert M.coeffs[pos[(0, 0, 1, 1)]] == pytest.approx(mu2 ** 2)
    assert M.coeffs[pos[(0, 0, 0, 1)]] == 0.0


def test_uniform_preset():
    spec = IID.uniform(1.0, 4)
    assert spec.mu2 == pytest.approx(1 / 3)
    assert spec.mu4 == pytest.approx(1 / 5)


def test_colored_gaussian_isserlis_matches_linear_map(rng):
    # x = L g with g standard normal: E[x^{⊗4}] is the pushforward of the standard moments
    L = rng.normal(size=(3, 3))
    sigma = L @ L.T
    M = moment_tensor(ColoredGaussian(sigma), 3, 2).to_dense()
    G = moment_tensor(IID.standard_gaussian(4), 3, 2).to_dense()
    pushed = np.einsum("ai,bj,ck,dl,ijkl->abcd", L, L, L, L, G)
    assert_allclose(M, pushed, rtol=1e-10, atol=1e-10)


def test_mixture_is_convex_combination():
    gauss, unif = IID.standard_gaussian(4), IID.uniform(1.0, 4)
    mix = moment_tensor(Mixture((0.25, 0.75), (gauss, unif)), 2, 2)
    expected = 0.25 * moment_tensor(gauss, 2, 2) + 0.75 * moment_tensor(unif, 2, 2)
    assert mix.allclose(expected)


def test_empirical_moments():
    points = np.array([[1.0, 0.0], [0.0, 2.0]])
    M = moment_tensor(Empirical(points), 2, 1)
    assert_allclose(M.to_dense(), [[0.5, 0.0], [0.0, 2.0]])


def test_spec_validation():
    with pytest.raises(PreconditionError):
        IID((2.0, 0.0, 1.0))
    with pytest.raises(PreconditionError):
        IID((1.0, 0.0, -1.0))
    with pytest.raises(PreconditionError):
        ColoredGaussian(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(PreconditionError):
        Mixture((0.5, 0.6), (IID.standard_gaussian(4), IID.standard_gaussian(4)))
    with pytest.raises(PreconditionError):
        moment_tensor(IID.standard_gaussian(2), 2, 2)
    with pytest.raises(ShapeError):
        moment_tensor(ColoredGaussian(np.eye(3)), 2, 2)


# ── Metric operators ──

def test_gaussian_metric_identity_pair():
    G = metric_from_spec(IID.standard_gaussian(4), 2, 2)
    I = SymTensor.from_dense(np.eye(2))
    assert G.inner(I, I) == pytest.approx(8.0)


def test_iid_closed_form_agrees(rng):
    for _ in range(20):
        mu2, mu4 = rng.uniform(0.2, 2.0), rng.uniform(0.5, 10.0)
        G = metric_from_spec(IID((1.0, 0.0, mu2, 0.0, mu4)), 3, 2)
        S, T = _random_symmetric(rng, 3), _random_symmetric(rng, 3)
        closed = iid_quadratic_inner(S, T, mu2, mu4)
        assert G.inner(SymTensor.from_dense(S), SymTensor.from_dense(T)) == pytest.approx(closed, rel=1e-10)


@pytest.mark.parametrize("spec", [
    IID.standard_gaussian(4),
    IID.uniform(1.0, 4),
    IID((1.0, 0.0, 0.5, 0.0, 9.0)),
    RotInvariant(3.0),
    ColoredGaussian(np.diag([1.0, 0.2])),
])
def test_induced_gram_is_never_diagonal(spec):
    gram = metric_from_spec(spec, 2, 2).gram
    off = gram - np.diag(np.diag(gram))
    assert np.abs(off).max() > 0


def test_frobenius_metric(rng):
    F = frobenius_metric(3, 3)
    assert_allclose(F.gram, np.diag(multinomial_weights(3, 3)))
    for _ in range(10):
        S = SymTensor(3, 3, rng.normal(size=packed_dim(3, 3)))
        T = SymTensor(3, 3, rng.normal(size=packed_dim(3, 3)))
        assert F.inner(S, T) == pytest.approx(frobenius_inner(S, T), rel=1e-14)
    e = rank_one([1, 0, 0], 1, 3)
    assert F.inner(e, e) == 1.0


def test_gradient_matches_finite_differences(rng):
    G = metric_from_spec(IID.standard_gaussian(6), 2, 3)
    S = SymTensor(2, 3, rng.normal(size=4))
    T = SymTensor(2, 3, rng.normal(size=4))
    h = 1e-6
    numeric = []
    for k in range(4):
        step = np.zeros(4)
        step[k] = h
        numeric.append((G.distance_sq(S + SymTensor(2, 3, step), T)
                        - G.distance_sq(S - SymTensor(2, 3, step), T)) / (2 * h))
    assert_allclose(G.gradient(S, T), numeric, rtol=1e-6, atol=1e-6)


def test_metric_psd_and_csv():
    G = metric_from_spec(IID.standard_gaussian(4), 2, 2)
    assert G.is_psd()
    lines = G.to_csv().splitlines()
    assert lines[0] == "11,12,22"
    assert len(lines) == 4


def test_metric_rejects_odd_moment_degree():
    with pytest.raises(ShapeError):
        metric_from_moments(rank_one([1, 0], 1, 3))


# ── Empirical risk ──

def test_erm_single_point():
    e = rank_one([1, 0], 1, 2)
    assert erm_inner([[1.0, 0.0]], e, e) == pytest.approx(1.0)


def test_erm_matches_moment_route(rng):
    points = rng.normal(size=(30, 2))
    S = SymTensor(2, 3, rng.normal(size=4))
    T = SymTensor(2, 3, rng.normal(size=4))
    via_moments = metric_from_spec(Empirical(points), 2, 3).inner(S, T)
    assert erm_inner(points, S, T) == pytest.approx(via_moments, rel=1e-10)


def test_erm_converges_to_gaussian(rng):
    points = rng.normal(size=(100_000, 2))
    I = SymTensor.from_dense(np.eye(2))
    assert erm_inner(points, I, I) == pytest.approx(8.0, rel=0.05)


def test_erm_nondegenerate(rng):
    assert erm_nondegenerate(rng.normal(size=(4, 2)), 2, 3)
    assert not erm_nondegenerate(rng.normal(size=(3, 2)), 2, 3)
    on_line = np.column_stack([rng.normal(size=10), np.zeros(10)])
    assert not erm_nondegenerate(on_line, 2, 2)


def test_erm_nondegenerate_dimension_mismatch(rng):
    assert not erm_nondegenerate(rng.normal(size=(10, 3)), 2, 2)
    assert not erm_nondegenerate(np.empty((0, 2)), 2, 2)


# ── JSON ──

def test_spec_json_roundtrip():
    spec = Mixture((0.5, 0.5), (IID.standard_gaussian(4), ColoredGaussian(np.diag([2.0, 1.0]))))
    back = spec_from_dict(spec_to_dict(spec))
    assert moment_tensor(back, 2, 2).allclose(moment_tensor(spec, 2, 2))


def test_spec_presets():
    assert spec_from_dict({"kind": "iid", "law": "uniform", "max_order": 4}).mu4 == pytest.approx(0.2)
    assert spec_from_dict({"kind": "iid", "law": "gaussian"}).mu4 == 3.0


def test_spec_from_dict_errors():
    with pytest.raises(SchemaError):
        spec_from_dict({"kind": "cauchy"})
    with pytest.raises(SchemaError):
        spec_from_dict({"kind": "rot_invariant"})


# ── Sampling agreement ──

MC_Z = 4.5  # per entry, over every entry of every spec


def _three_point(n, mu2, mu4):
    """Coordinates on {-a, 0, a} with the given second and fourth moments."""
    a, p = np.sqrt(mu4 / mu2), mu2 * mu2 / mu4
    return IID((1.0, 0.0, mu2, 0.0, mu4)), lambda rng, N: a * rng.choice(
        [-1.0, 0.0, 1.0], size=(N, n), p=[p / 2, 1 - p, p / 2])


def _radial(n, b):
    """ρ uniform on [0, b] along a uniform direction."""
    def sample(rng, N):
        g = rng.normal(size=(N, n))
        return rng.uniform(0, b, size=(N, 1)) * g / np.linalg.norm(g, axis=1, keepdims=True)
    return RotInvariant(b ** 4 / 5), sample


def _colored(L):
    return ColoredGaussian(L @ L.T), lambda rng, N: rng.normal(size=(N, L.shape[0])) @ L.T


def _uniform_box(n):
    return IID.uniform(1.0, 4), lambda rng, N: rng.uniform(-1.0, 1.0, size=(N, n))


def _mixture(weight, first, second):
    def sample(rng, N):
        return np.where(rng.random(size=(N, 1)) < weight, first[1](rng, N), second[1](rng, N))
    return Mixture((weight, 1 - weight), (first[0], second[0])), sample


def _resampled(points):
    return Empirical(points), lambda rng, N: points[rng.integers(0, len(points), size=N)]


def _sample_moments(sample, rng, N, order, chunk=100_000):
    total, total_sq = 0.0, 0.0
    for start in range(0, N, chunk):
        features = monomial_features(sample(rng, min(chunk, N - start)), order)
        total = total + features.sum(axis=0)
        total_sq = total_sq + (features ** 2).sum(axis=0)
    mean = total / N
    return mean, np.sqrt(np.maximum(total_sq / N - mean ** 2, 0.0) / N)


def _assert_moments_match(spec, sample, rng, n, N):
    mean, se = _sample_moments(sample, rng, N, 4)
    exact = moment_tensor(spec, n, 2).coeffs
    assert np.all(np.abs(exact - mean) <= MC_Z * se + 1e-12), (type(spec).__name__, exact, mean, se)


SAMPLED = {
    "gaussian": lambda rng: (IID.standard_gaussian(4), lambda rng, N: rng.normal(size=(N, 2))),
    "iid": lambda rng: _three_point(2, 0.8, 3.2),
    "colored": lambda rng: _colored(np.array([[1.0, 0.0], [0.5, 0.8]])),
    "rot_invariant": lambda rng: _radial(2, 2.0),
    "mixture": lambda rng: _mixture(0.4, _colored(np.array([[1.0, 0.0], [0.5, 0.8]])), _uniform_box(2)),
    "empirical": lambda rng: _resampled(rng.normal(size=(7, 2)) * [0.5, 2.0]),
}


@pytest.mark.parametrize("kind", list(SAMPLED))
def test_moment_tensor_matches_sampling(kind, rng):
    spec, sample = SAMPLED[kind](rng)
    _assert_moments_match(spec, sample, rng, 2, 100_000)


@pytest.mark.slow
def test_random_moment_tensors_match_sampling(rng):
    for trial in range(20):
        n, kind = 2 + trial % 2, trial % 5
        if kind == 0:
            mu2 = rng.uniform(0.5, 1.5)
            spec, sample = _three_point(n, mu2, mu2 * mu2 * rng.uniform(1.5, 5.0))
        elif kind == 1:
            spec, sample = _colored(rng.normal(size=(n, n)))
        elif kind == 2:
            spec, sample = _radial(n, rng.uniform(1.0, 3.0))
        elif kind == 3:
            spec, sample = _mixture(rng.uniform(0.2, 0.8), _colored(rng.normal(size=(n, n))),
                                    _radial(n, rng.uniform(1.0, 3.0)))
        else:
            spec, sample = _resampled(rng.normal(size=(10, n)))
        _assert_moments_match(spec, sample, rng, n, 1_000_000)
