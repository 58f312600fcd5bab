import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.errors import PreconditionError, ShapeError
from core.network import (
    NetworkParams, RegimeReport, SignatureTriple, apply_trivial_symmetry, branch_membership,
    crit_locus_test, d_tau, evaluate, fiber_components, numerical_rank, pullback, r_thick, regime,
    stiefel_nullity_check, tau,
)
from core.symtensor import SymTensor, evaluate_poly, gradient_poly, packed_dim, rank_one


def _params(rng, r, n, d):
    return NetworkParams(rng.normal(size=r), rng.normal(size=(r, n)), d)


# ── tau and its Jacobian ──

def test_tau_cancellation():
    params = NetworkParams([1.0, -1.0], [[1.0, 0.0], [1.0, 0.0]], 3)
    assert_allclose(tau(params).coeffs, 0.0)


def test_tau_quadratic_is_matrix_product(rng):
    W = rng.normal(size=(3, 4))
    params = NetworkParams([1.0, 1.0, -1.0], W, 2)
    assert_allclose(tau(params).to_dense(), W.T @ np.diag([1.0, 1.0, -1.0]) @ W, atol=1e-12)


def test_evaluate_matches_tensor(rng):
    params = _params(rng, 3, 3, 4)
    X = rng.normal(size=(100, 3))
    T = tau(params)
    direct = np.array([sum(a * (w @ x) ** 4 for a, w in zip(params.alpha, params.W)) for x in X])
    assert_allclose(evaluate(params, X), direct, rtol=1e-12)
    assert_allclose([evaluate_poly(T, x) for x in X], direct, rtol=1e-10, atol=1e-12)


def test_d_tau_zero_params():
    params = NetworkParams(np.zeros(2), np.zeros((2, 3)), 3)
    assert not np.any(d_tau(params))


def test_d_tau_matches_finite_differences(rng):
    params = _params(rng, 3, 2, 4)
    x = params.to_vector()
    h = 1e-5
    columns = []
    for k in range(x.shape[0]):
        e = np.zeros_like(x)
        e[k] = h
        plus = tau(NetworkParams.from_vector(x + e, 3, 2, 4)).coeffs
        minus = tau(NetworkParams.from_vector(x - e, 3, 2, 4)).coeffs
        columns.append((plus - minus) / (2 * h))
    assert_allclose(d_tau(params), np.column_stack(columns), rtol=1e-6, atol=1e-6)


def test_d_tau_surjective_for_wide_quadratics(rng):
    params = _params(rng, 4, 3, 2)
    assert numerical_rank(d_tau(params)) == packed_dim(3, 2)


def test_pullback_is_transposed_jacobian(rng):
    params = _params(rng, 3, 3, 3)
    g = rng.normal(size=packed_dim(3, 3))
    grad_alpha, grad_W = pullback(params, g)
    full = d_tau(params).T @ g
    assert_allclose(grad_alpha, full[:3], rtol=1e-12, atol=1e-12)
    assert_allclose(grad_W.ravel(), full[3:], rtol=1e-12, atol=1e-12)


def test_trivial_symmetry_preserves_tau(rng):
    params = _params(rng, 3, 2, 3)
    moved = apply_trivial_symmetry(params, [2, 0, 1], [0.5, -2.0, 3.0])
    assert tau(moved).allclose(tau(params), rtol=1e-10, atol=1e-12)
    with pytest.raises(PreconditionError):
        apply_trivial_symmetry(params, [0, 0, 1], [1.0, 1.0, 1.0])
    with pytest.raises(PreconditionError):
        apply_trivial_symmetry(params, [0, 1, 2], [1.0, 0.0, 1.0])


def test_params_roundtrip_and_deltas():
    params = NetworkParams([2.0, -1.0], [[1.0, 1.0], [0.0, 3.0]], 2)
    assert_allclose(params.deltas(), [4.0 - 1.0, 1.0 - 4.5])
    back = NetworkParams.from_dict(params.to_dict())
    assert_allclose(back.to_vector(), params.to_vector())
    with pytest.raises(ShapeError):
        NetworkParams([1.0], [[1.0, 0.0], [0.0, 1.0]], 2)
    with pytest.raises(ShapeError):
        NetworkParams.from_vector(np.zeros(5), 2, 2, 2)


# ── Critical and branch loci ──

def test_identity_network_is_regular():
    result = crit_locus_test(NetworkParams(np.ones(3), np.eye(3), 2))
    assert not result.in_crit
    assert result.rank == 6
    assert result.witness is None


def test_dead_neuron_is_critical_with_square_witness():
    params = NetworkParams([1.0, 1.0, 0.0], [[1, 0, 0], [0, 1, 0], [0, 0, 0]], 2)
    result = crit_locus_test(params)
    assert result.in_crit
    dense = result.witness.to_dense()
    assert_allclose(np.abs(dense), np.diag([0.0, 0.0, 1.0]), atol=1e-10)
    for w in params.W[:2]:
        assert_allclose(gradient_poly(result.witness, w), 0.0, atol=1e-10)


def test_generic_binary_quartic_network_is_regular(rng):
    result = crit_locus_test(_params(rng, 3, 2, 4))
    assert not result.in_crit
    assert result.rank == 5


def test_branch_membership_quadratic():
    assert branch_membership(SymTensor.from_dense(np.diag([1.0, 1.0, 0.0])))
    assert not branch_membership(SymTensor.from_dense(np.eye(3)))


def test_branch_membership_binary_forms():
    cubic = SymTensor.from_polynomial_coefficients(2, 3, [0.0, 1.0, 0.0, 0.0])   # x_1² x_2
    assert not branch_membership(cubic)
    assert branch_membership(rank_one([1.0, 2.0], 1.0, 3))
    with pytest.raises(ShapeError):
        branch_membership(rank_one([1.0, 0.0, 0.0], 1.0, 3))


# ── Regimes ──

@pytest.mark.parametrize("d,n,expected", [(2, 7, 7), (4, 3, 6), (3, 2, 2), (3, 3, 4), (3, 5, 8)])
def test_r_thick(d, n, expected):
    assert r_thick(d, n) == expected


def test_regime_labels():
    report = regime(4, 3, 6)
    assert report.r_thick == 6
    assert report.regime == "thick_or_filling"
    assert report.r_fill_exact is None
    assert regime(4, 3, 5).regime == "low_dimensional"
    assert regime(4, 3, 12).regime == "filling"
    assert regime(2, 7, 7).r_fill_exact == 7
    assert regime(2, 7, 7).regime == "filling"
    binary = regime(3, 2, 2)
    assert (binary.r_thick, binary.r_fill_exact, binary.regime) == (2, 3, "thick")
    assert RegimeReport.from_dict(report.to_dict()) == report


def test_regime_rejects_bad_degree():
    with pytest.raises(PreconditionError):
        regime(1, 3, 2)


# ── Fibers and the Stiefel chart ──

@pytest.mark.parametrize("sig,r,expected", [
    ((2, 1, 0), 3, 12),
    ((2, 2, 0), 3, 0),
    ((1, 1, 1), 3, 1),
    ((2, 0, 1), 2, 2),
    ((0, 3, 0), 3, 2),
])
def test_fiber_components(sig, r, expected):
    assert fiber_components(SignatureTriple(*sig), r) == expected


def test_signature_of_matrix():
    sig = SignatureTriple.of_matrix(np.diag([2.0, -1.0, 0.0, 3.0]))
    assert (sig.s_plus, sig.s_minus, sig.s_zero) == (2, 1, 1)


def _stiefel(rng, r, n):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Q[:r]


@pytest.mark.parametrize("alpha,n,predicted", [
    ((1.0, 2.0, -0.5), 4, 0),
    ((1.0, 1.0), 3, 1),
    ((0.7, 0.7, 0.7), 3, 3),
    ((1.0, 1.0, 2.0), 4, 1),
])
def test_stiefel_nullity(rng, alpha, n, predicted):
    report = stiefel_nullity_check(alpha, _stiefel(rng, len(alpha), n))
    assert report.predicted == predicted
    assert report.numeric == predicted


def test_stiefel_requires_orthonormal_rows():
    with pytest.raises(PreconditionError):
        stiefel_nullity_check([1.0, 2.0], [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])


def test_surjective_jacobian_pullback_only_vanishes_on_zero(rng):
    params = _params(rng, 6, 3, 3)
    jac = d_tau(params)
    assert numerical_rank(jac) == packed_dim(3, 3)
    floor = np.linalg.svd(jac, compute_uv=False)[-1]
    for _ in range(10):
        g = rng.normal(size=packed_dim(3, 3))
        grad_alpha, grad_W = pullback(params, g)
        size = np.sqrt(np.sum(grad_alpha ** 2) + np.sum(grad_W ** 2))
        assert size >= floor * np.linalg.norm(g) * (1 - 1e-9)


@pytest.mark.parametrize("d,n", [(2, 4), (3, 2), (3, 4), (4, 3)])
def test_regime_is_monotone_in_width(d, n):
    order = ("low_dimensional", "thick", "thick_or_filling", "filling")
    ranks = [order.index(regime(d, n, r).regime) for r in range(0, 3 * r_thick(d, n) + 2)]
    assert ranks == sorted(ranks)
