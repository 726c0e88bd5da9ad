import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from certrom import estimators as est
from certrom.errors import (
    DimensionMismatch,
    DimensionTooLarge,
    EmptyBasis,
    InvalidSpec,
    SingularReducedMatrix,
)
from certrom.linalg import orth, projector_residual
from certrom.rom import project, residual, rom_solve
from certrom.system import ParameterGrid, ParameterPoint, fom_solve

from conftest import (
    constant_system,
    crandn,
    dense_matrix,
    random_affine_system,
    random_basis,
    random_point,
)


def exact_error(system, rm, mu):
    _, x_hat = rom_solve(rm, mu)
    return fom_solve(system, mu) - x_hat, residual(system, mu, x_hat)


def small_case(rng, n=20, r=3, p=1):
    system = random_affine_system(rng, n, p=p)
    rm = project(system, random_basis(rng, n, r))
    return system, rm


def test_certificate_effectivity_rule():
    mu = ParameterPoint(1.0)
    assert est.ErrorCertificate(mu, 0, 2.0, 0.5).effectivity == 4.0
    assert est.ErrorCertificate(mu, 0, 2.0, 0.0).effectivity is None
    assert est.ErrorCertificate(mu, 0, 2.0).effectivity is None


def test_state_validation():
    with pytest.raises(InvalidSpec):
        est.EstimatorState("bogus")
    with pytest.raises(InvalidSpec):
        est.EstimatorState("proposed")
    with pytest.raises(InvalidSpec):
        est.random_vectors(5, 0)
    with pytest.raises(InvalidSpec):
        est.randomized_state(np.eye(3), np.empty((3, 0)))


def test_random_vectors_are_seeded():
    np.testing.assert_array_equal(est.random_vectors(7, 3, seed=4), est.random_vectors(7, 3, seed=4))
    assert not np.array_equal(est.random_vectors(7, 3, seed=4), est.random_vectors(7, 3, seed=5))


# standard estimator

def test_standard_identity_equals_residual(rng):
    system = constant_system(np.eye(5), crandn(rng, 5))
    rm = project(system, random_basis(rng, 5, 2))
    mu = ParameterPoint(1.0)
    _, r = exact_error(system, rm, mu)
    assert est.standard_estimate(system, rm, mu).estimate == pytest.approx(np.linalg.norm(r), rel=1e-12)


def test_standard_diagonal():
    system = constant_system(np.diag([2.0, 0.5]), np.array([1.0, 1.0]))
    rm = project(system, np.array([[1.0], [0.0]]))
    mu = ParameterPoint(1.0)
    _, r = exact_error(system, rm, mu)
    assert est.standard_estimate(system, rm, mu).estimate == pytest.approx(2 * np.linalg.norm(r), rel=1e-14)


def test_standard_bound_random(rng):
    system, rm = small_case(rng, n=30, r=4)
    mu = random_point(rng)
    e, r = exact_error(system, rm, mu)
    s = np.linalg.svd(dense_matrix(system, mu), compute_uv=False)
    cert = est.standard_estimate(system, rm, mu)
    assert np.linalg.norm(r) / s.max() <= np.linalg.norm(e) <= cert.estimate
    assert cert.estimate == pytest.approx(np.linalg.norm(r) / s.min(), rel=1e-10)


def test_standard_near_resonance_is_infinite():
    system = constant_system(np.diag([1.0, 1e-20, 3.0]), np.ones(3))
    rm = project(system, np.eye(3)[:, :1])
    cert = est.standard_estimate(system, rm, ParameterPoint(1.0))
    assert cert.estimate == np.inf


def test_standard_respects_svd_cap(rng):
    system, rm = small_case(rng, n=12)
    with pytest.raises(DimensionTooLarge):
        est.standard_estimate(system, rm, random_point(rng), state=est.standard_state(svd_cap=10))


# residual estimator

def test_residual_exact_rom_is_zero(rng):
    system = random_affine_system(rng, 10)
    rm = project(system, np.eye(10))
    assert est.residual_estimate(system, rm, random_point(rng)).estimate <= 1e-12


def test_residual_zero_rom_is_rhs_norm(rng):
    # basis orthogonal to b and invariant under A: the Galerkin solution is zero
    A = np.diag([1.0, 2.0, 3.0, 4.0])
    b = np.array([1.0, 1.0, 0.0, 0.0])
    system = constant_system(A, b)
    rm = project(system, np.eye(4)[:, 2:])
    assert est.residual_estimate(system, rm, ParameterPoint(1.0)).estimate == pytest.approx(np.sqrt(2))


def test_residual_underestimates_small_operator(rng):
    system = constant_system(0.01 * np.eye(8), crandn(rng, 8))
    rm = project(system, random_basis(rng, 8, 2))
    mu = ParameterPoint(1.0)
    e, _ = exact_error(system, rm, mu)
    cert = est.residual_estimate(system, rm, mu)
    assert cert.estimate == pytest.approx(0.01 * np.linalg.norm(e), rel=1e-12)


def test_port_out_of_range(rng):
    system, rm = small_case(rng)
    with pytest.raises(DimensionMismatch):
        est.residual_estimate(system, rm, random_point(rng), port=1)


# error subspace

def test_error_subspace_same_span(rng):
    V = random_basis(rng, 15, 3)
    Ve = est.build_error_subspace(V, V)
    assert Ve.shape[1] == 3
    assert projector_residual(Ve, V) <= 1e-12


def test_error_subspace_disjoint_unit_vectors():
    e1, e2 = np.eye(5)[:, :1], np.eye(5)[:, 1:2]
    Ve = est.build_error_subspace(e2, e1)
    np.testing.assert_allclose(np.abs(Ve), np.eye(5)[:, :2], atol=1e-15)


def test_error_subspace_rank_matches_oracle(rng):
    shared = crandn(rng, 30, 2)
    V = orth(np.hstack([shared, crandn(rng, 30, 3)]))
    Vr = orth(np.hstack([shared @ crandn(rng, 2, 2), crandn(rng, 30, 2)]))
    Ve = est.build_error_subspace(V, Vr)
    assert Ve.shape[1] == np.linalg.matrix_rank(np.hstack([Vr, V])) == 7
    assert projector_residual(Ve, np.hstack([Vr, V])) <= 1e-10


def test_error_subspace_errors():
    with pytest.raises(DimensionMismatch):
        est.build_error_subspace(np.eye(4), np.eye(5))
    with pytest.raises(EmptyBasis):
        est.build_error_subspace(np.zeros((4, 1)), np.zeros((4, 1)))


# proposed estimator

def test_proposed_vanishes_when_error_basis_is_rom_basis(rng):
    system, rm = small_case(rng, n=25, r=4)
    state = est.proposed_state(rm.basis)
    for _ in range(5):
        mu = random_point(rng)
        cert, e_tilde = est.proposed_estimate(system, rm, state, mu)
        assert cert.estimate <= 1e-9 * np.linalg.norm(system.assemble_rhs(mu))


def test_proposed_full_space_is_exact(rng):
    system, rm = small_case(rng, n=18, r=3, p=2)
    state = est.proposed_state(np.eye(18))
    mu = random_point(rng)
    e, _ = exact_error(system, rm, mu)
    for port in range(2):
        cert, e_tilde = est.proposed_estimate(system, rm, state, mu, port)
        assert np.linalg.norm(e_tilde - e[:, port]) <= 1e-9 * np.linalg.norm(e[:, port])
        assert cert.estimate == pytest.approx(np.linalg.norm(e[:, port]), rel=1e-9)


def test_proposed_matches_direct_formula(rng):
    system, rm = small_case(rng, n=25, r=3)
    Vr = random_basis(rng, 25, 4)
    Ve = est.build_error_subspace(rm.basis, Vr)
    mu = random_point(rng)
    _, r = exact_error(system, rm, mu)
    A = dense_matrix(system, mu)
    oracle = Ve @ np.linalg.solve(Ve.conj().T @ A @ Ve, Ve.conj().T @ r[:, 0])
    cert, e_tilde = est.proposed_estimate(system, rm, est.proposed_state(Ve), mu)
    np.testing.assert_allclose(e_tilde, oracle, rtol=1e-10, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r=st.integers(1, 5), rr=st.integers(1, 6))
def test_proposed_triangle_sandwich(seed, r, rr):
    rng = np.random.default_rng(seed)
    system, rm = small_case(rng, n=20, r=r)
    Ve = est.build_error_subspace(rm.basis, random_basis(rng, 20, rr))
    mu = random_point(rng)
    e, _ = exact_error(system, rm, mu)
    cert, e_tilde = est.proposed_estimate(system, rm, est.proposed_state(Ve), mu)
    e = e[:, 0]
    assert abs(cert.estimate - np.linalg.norm(e)) <= np.linalg.norm(e - e_tilde) + 1e-12


def test_proposed_monotone_exactness(rng):
    system, rm = small_case(rng, n=20, r=2)
    mu = random_point(rng)
    e, _ = exact_error(system, rm, mu)
    extra = crandn(rng, 20, 18)
    gaps = []
    for k in (2, 10, 18):
        Ve = est.build_error_subspace(rm.basis, extra[:, :k])
        _, e_tilde = est.proposed_estimate(system, rm, est.proposed_state(Ve), mu)
        gaps.append(np.linalg.norm(e_tilde - e[:, 0]))
    assert gaps[-1] <= 1e-9 * np.linalg.norm(e)


def test_error_residual_cases(rng):
    system, rm = small_case(rng, n=15)
    mu = random_point(rng)
    e, r = exact_error(system, rm, mu)
    assert np.linalg.norm(est.error_residual(system, mu, e, r)) <= 1e-9 * np.linalg.norm(r)
    np.testing.assert_array_equal(est.error_residual(system, mu, np.zeros_like(r), r), r)
    et = crandn(rng, 15, 1)
    np.testing.assert_allclose(est.error_residual(system, mu, et, r), r - dense_matrix(system, mu) @ et,
                               rtol=1e-12, atol=1e-13)
    with pytest.raises(DimensionMismatch):
        est.error_residual(system, mu, et[:5], r)


def test_error_residual_norms_from_batch(rng):
    system, rm = small_case(rng, n=20, r=3, p=2)
    Ve = est.build_error_subspace(rm.basis, random_basis(rng, 20, 3))
    pts = [random_point(rng) for _ in range(4)]
    batch = est.estimate_points(system, rm, est.proposed_state(Ve), pts, error_residuals=True,
                                keep_vectors=True)
    for k, mu in enumerate(pts):
        _, r = exact_error(system, rm, mu)
        re = est.error_residual(system, mu, batch.e_tilde[k], r)
        np.testing.assert_allclose(batch.error_residual_norms[k], np.linalg.norm(re, axis=0),
                                   rtol=1e-8)


# randomized estimator

def randomized_value(e_like, Z):
    return np.sqrt(np.mean(np.abs(Z.T @ e_like) ** 2))


def test_randomized_full_dual_space_equals_sketch_of_error(rng):
    system, rm = small_case(rng, n=16, r=3)
    Z = est.random_vectors(16, 6, seed=1)
    state = est.randomized_state(np.eye(16), Z)
    mu = random_point(rng)
    e, _ = exact_error(system, rm, mu)
    cert = est.randomized_estimate(system, rm, state, mu)
    assert cert.estimate == pytest.approx(randomized_value(e[:, 0], Z), rel=1e-10)


@pytest.mark.parametrize("K", [1, 5, 20])
def test_randomized_with_error_basis_equals_sketch_of_error_estimate(rng, K):
    system, rm = small_case(rng, n=30, r=3)
    Ve = est.build_error_subspace(rm.basis, random_basis(rng, 30, 5))
    Z = est.random_vectors(30, K, seed=K)
    rstate, pstate = est.randomized_state(Ve, Z), est.proposed_state(Ve)
    for _ in range(5):
        mu = random_point(rng)
        _, e_tilde = est.proposed_estimate(system, rm, pstate, mu)
        cert = est.randomized_estimate(system, rm, rstate, mu)
        assert cert.estimate == pytest.approx(randomized_value(e_tilde, Z), rel=1e-10)


def test_randomized_blind_to_orthogonal_error(rng):
    system, rm = small_case(rng, n=12, r=2)
    mu = random_point(rng)
    e, _ = exact_error(system, rm, mu)
    z = rng.standard_normal(12)
    P = orth(np.column_stack([e[:, 0].real, e[:, 0].imag]))
    z -= P @ (P.T @ z)
    state = est.randomized_state(np.eye(12), z[:, None])
    cert = est.randomized_estimate(system, rm, state, mu)
    assert cert.estimate <= 1e-10 * np.linalg.norm(e)
    assert np.linalg.norm(e) > 1e-3


def test_build_dual_basis_reduces_dual_residual(rng):
    from certrom.benchmarks import BenchmarkSpec, generate
    system = generate(BenchmarkSpec("damped_cavity", n=120, seed=2))
    grid = system.grid("train")
    Z = est.random_vectors(system.n, 4, seed=0)
    Vd, hist = est.build_dual_basis(system, grid, Z, tol=1e-3, max_iterations=30)
    assert hist.indicators[-1] <= 1e-3
    assert np.allclose(Vd.T @ Vd, np.eye(Vd.shape[1]), atol=1e-10) and np.isrealobj(Vd)
    # the greedy indicator is the true worst relative dual residual
    Ad = np.array([Vd.T @ (A @ Vd) for A in system.matrices])
    worst = 0.0
    for mu in grid:
        A = dense_matrix(system, mu)
        xi = np.linalg.solve(np.tensordot(system.thetas(mu), Ad, axes=1).T, Vd.T @ Z)
        res = Z - A.T @ (Vd @ xi)
        worst = max(worst, np.max(np.linalg.norm(res, axis=0) / np.linalg.norm(Z, axis=0)))
    assert worst == pytest.approx(hist.indicators[-1], rel=1e-6)


def test_singular_reduced_systems():
    # the ROM matrix on e3 is regular, the residual/dual matrix on span{e1, e2} is zero
    system = constant_system(np.diag([0.0, 0.0, 1.0]), np.array([1.0, 1.0, 1.0]))
    rm = project(system, np.eye(3)[:, 2:])
    mu = ParameterPoint(1.0)
    assert est.residual_estimate(system, rm, mu).estimate == pytest.approx(np.sqrt(2))
    with pytest.raises(SingularReducedMatrix):
        est.proposed_estimate(system, rm, est.proposed_state(np.eye(3)[:, :2]), mu)
    with pytest.raises(SingularReducedMatrix):
        est.randomized_estimate(system, rm, est.randomized_state(np.eye(3)[:, :2], np.ones((3, 1))), mu)
    values = est.estimate_points(system, rm, est.proposed_state(np.eye(3)[:, :2]), [mu]).values
    assert np.all(values == np.inf)


# truth helpers

def test_true_error_cases(rng):
    system = random_affine_system(rng, 14)
    mu = random_point(rng)
    assert est.true_error(system, project(system, np.eye(14)), mu) <= 1e-12
    x = fom_solve(system, mu)
    V = orth(np.hstack([x, crandn(rng, 14, 2)]))
    assert est.true_error(system, project(system, V), mu) <= 1e-9 * np.linalg.norm(x)
    rm = project(system, random_basis(rng, 14, 3))
    _, r = exact_error(system, rm, mu)
    oracle = np.linalg.norm(np.linalg.solve(dense_matrix(system, mu), r))
    assert est.true_error(system, rm, mu) == pytest.approx(oracle, rel=1e-8)


def test_certify_and_batch_match_per_point(rng):
    system, rm = small_case(rng, n=20, r=3, p=2)
    Ve = est.build_error_subspace(rm.basis, random_basis(rng, 20, 2))
    state = est.proposed_state(Ve)
    grid = ParameterGrid.uniform(0.1, 0.2, 5)
    certs = est.certify(system, rm, state, grid)
    assert len(certs) == 10
    for c in certs:
        single, _ = est.proposed_estimate(system, rm, state, c.mu, c.port)
        assert c.estimate == pytest.approx(single.estimate, rel=1e-12)
        assert c.true_error == pytest.approx(est.true_error(system, rm, c.mu, c.port), rel=1e-10)
        assert c.effectivity == pytest.approx(c.estimate / c.true_error)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rhs_scaling_linearity(seed):
    rng = np.random.default_rng(seed)
    system, rm = small_case(rng, n=15, r=2)
    Ve = est.build_error_subspace(rm.basis, random_basis(rng, 15, 3))
    Z = est.random_vectors(15, 5, seed=seed % 1000)
    mu = random_point(rng)
    c = 1e3
    scaled = system.with_scale(system.scale / c)
    rm_c = project(scaled, rm.basis)
    pairs = [
        (est.residual_estimate(system, rm, mu).estimate, est.residual_estimate(scaled, rm_c, mu).estimate),
        (est.standard_estimate(system, rm, mu).estimate, est.standard_estimate(scaled, rm_c, mu).estimate),
        (est.proposed_estimate(system, rm, est.proposed_state(Ve), mu)[0].estimate,
         est.proposed_estimate(scaled, rm_c, est.proposed_state(Ve), mu)[0].estimate),
        (est.randomized_estimate(system, rm, est.randomized_state(Ve, Z), mu).estimate,
         est.randomized_estimate(scaled, rm_c, est.randomized_state(Ve, Z), mu).estimate),
        (est.true_error(system, rm, mu), est.true_error(scaled, rm_c, mu)),
    ]
    for base, big in pairs:
        assert big == pytest.approx(c * base, rel=1e-12)
