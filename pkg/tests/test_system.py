import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from certrom.errors import InvalidSpec, SingularMatrix
from certrom.system import (
    AffineSystem,
    Coefficient,
    ParameterDomain,
    ParameterGrid,
    ParameterPoint,
    default_scale,
    fom_solve,
    load_system,
    save_system,
)

from conftest import constant_system, crandn, dense_matrix, random_affine_system, random_point


def cavity_like(rng, n=30, scale=1.0):
    S = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")
    T = sp.identity(n, format="csr")
    Q = np.zeros((n, 1))
    Q[0, 0] = 1.0
    return AffineSystem([S, T], [Coefficient(), Coefficient(s_power=2)], [Q],
                        [Coefficient(s_power=1)], ParameterDomain(0.01, 0.1), scale=scale,
                        names=["S", "T"], rhs_names=["Q"])


def test_parameter_point_s():
    mu = ParameterPoint(3.0)
    assert mu.s == pytest.approx(2j * np.pi * 3.0)
    assert ParameterPoint.parse(str(ParameterPoint(1.5, (0.9, 1.1)))) == ParameterPoint(1.5, (0.9, 1.1))


@pytest.mark.parametrize("f", [0.0, -1.0, np.inf, np.nan])
def test_parameter_point_rejects_bad_frequency(f):
    with pytest.raises(InvalidSpec):
        ParameterPoint(f)


def test_domain_validation_and_contains():
    with pytest.raises(InvalidSpec):
        ParameterDomain(2.0, 1.0)
    dom = ParameterDomain(1.0, 2.0, ((0.8, 1.2),))
    assert dom.contains(ParameterPoint(1.5, (1.0,)))
    assert not dom.contains(ParameterPoint(1.5, (1.3,)))
    assert not dom.contains(ParameterPoint(2.5, (1.0,)))
    assert not dom.contains(ParameterPoint(1.5))
    assert ParameterDomain.from_dict(dom.to_dict()) == dom


def test_grid_invariants():
    with pytest.raises(InvalidSpec):
        ParameterGrid(())
    with pytest.raises(InvalidSpec):
        ParameterGrid((ParameterPoint(1.0), ParameterPoint(1.0)))
    g = ParameterGrid.uniform(1.0, 2.0, 5, extra=[[0.9, 1.1], [1.0, 1.2]])
    assert len(g) == 20
    assert ParameterGrid.from_list(g.to_list()) .points == g.points
    mid = ParameterGrid.midpoints(1.0, 2.0, 4)
    assert not set(mid.frequencies) & set(ParameterGrid.uniform(1.0, 2.0, 5).frequencies)


def test_grid_from_spec(tmp_path):
    path = tmp_path / "pts.json"
    path.write_text(json.dumps([[1.0], [1.5]]))
    assert len(ParameterGrid.from_spec({"kind": "file", "path": str(path)})) == 2
    assert len(ParameterGrid.from_spec({"kind": "midpoints", "f_lo": 1, "f_hi": 2, "num": 7})) == 7
    with pytest.raises(InvalidSpec):
        ParameterGrid.from_spec({"kind": "spiral"})


@pytest.mark.parametrize("text, mu, expected", [
    ("1.0", ParameterPoint(2.0), 1.0),
    ("s", ParameterPoint(2.0), 4j * np.pi),
    ("s^2", ParameterPoint(2.0), -(4 * np.pi) ** 2),
    ("s^2*d2/2.0", ParameterPoint(2.0, (1.0, 3.0)), -(4 * np.pi) ** 2 * 1.5),
    ("-0.5*s", ParameterPoint(1.0), -1j * np.pi),
])
def test_coefficient_parse_and_evaluate(text, mu, expected):
    c = Coefficient.parse(text)
    assert c(mu) == pytest.approx(expected, rel=1e-15)
    assert Coefficient.parse(str(c)) == c


@pytest.mark.parametrize("text", ["s^-1", "x", "d1/1*d2/1", "s**2"])
def test_coefficient_parse_rejects(text):
    with pytest.raises(InvalidSpec):
        Coefficient.parse(text)


def test_assemble_helmholtz_form(rng):
    system = cavity_like(rng)
    mu = ParameterPoint(0.05)
    S, T = system.matrices
    expected = S.toarray() - (2 * np.pi * 0.05) ** 2 * T.toarray()
    np.testing.assert_allclose(dense_matrix(system, mu), expected, rtol=0, atol=1e-15)
    assert sp.issparse(system.assemble(mu))


def test_assemble_single_constant_term(rng):
    A = crandn(rng, 5, 5)
    system = constant_system(A, np.ones(5))
    for f in (1.0, 1.7):
        np.testing.assert_array_equal(dense_matrix(system, ParameterPoint(f)), A)


def test_assemble_mixed_sparse_dense_is_dense(rng):
    system = AffineSystem([sp.identity(4, format="csr"), np.ones((4, 4))],
                          [Coefficient(), Coefficient(s_power=1)], [np.ones((4, 1))],
                          [Coefficient()], ParameterDomain(1.0, 2.0), scale=1.0)
    A = system.assemble(ParameterPoint(1.0))
    assert isinstance(A, np.ndarray) and not isinstance(A, np.matrix)
    np.testing.assert_allclose(A, np.eye(4) + 2j * np.pi * np.ones((4, 4)))


def test_assemble_rhs_scaling():
    Q = np.array([[1.0], [2.0]])
    mu = ParameterPoint(3.0)
    sys1 = AffineSystem([np.eye(2)], [Coefficient()], [Q], [Coefficient(s_power=1)],
                        ParameterDomain(1.0, 5.0), scale=1.0)
    np.testing.assert_allclose(sys1.assemble_rhs(mu), mu.s * Q, rtol=1e-15)
    big = sys1.with_scale(1e5)
    np.testing.assert_allclose(big.assemble_rhs(mu), 1e-5 * mu.s * Q, rtol=1e-15)
    np.testing.assert_allclose(sys1.with_scale(2.0).assemble_rhs(mu), 0.5 * sys1.assemble_rhs(mu),
                               rtol=1e-15)


def test_assemble_linearity(rng):
    system = random_affine_system(rng, 10)
    mu = random_point(rng)
    doubled = system.with_coefficients(
        [Coefficient(2 * c.const, c.s_power, c.ratio, c.ref) for c in system.coefficients])
    np.testing.assert_allclose(dense_matrix(doubled, mu), 2 * dense_matrix(system, mu), rtol=1e-15)


def test_invalid_scale():
    with pytest.raises(InvalidSpec):
        constant_system(np.eye(2), np.ones(2), scale=0.0)


def test_default_scale():
    Q = [np.full((3, 1), 2.0)]
    dom = ParameterDomain(1.0, 1e4 / (2 * np.pi))
    # peak |Q| * |s| = 2e4 -> 10^round(4.30) = 1e4
    assert default_scale(Q, [Coefficient(s_power=1)], dom) == 1e4
    assert default_scale([np.full((3, 1), 1e-3)], [Coefficient()], dom) == 1.0


def test_fom_solve_identity(rng):
    B = crandn(rng, 6, 2)
    system = constant_system(np.eye(6), B)
    np.testing.assert_allclose(fom_solve(system, ParameterPoint(1.5)), B, rtol=1e-15)


def test_fom_solve_diagonal():
    d = np.array([2.0, -4.0, 0.5])
    system = constant_system(np.diag(d), np.ones(3))
    np.testing.assert_allclose(fom_solve(system, ParameterPoint(1.2))[:, 0], 1 / d, rtol=1e-15)


def test_fom_solve_matches_dense_oracle():
    from certrom.benchmarks import BenchmarkSpec, generate
    system = generate(BenchmarkSpec("damped_cavity", n=600, p=2, dims=2, seed=3))
    rng = np.random.default_rng(0)
    for _ in range(3):
        mu = random_point(rng, system.domain.f_lo, system.domain.f_hi)
        X = fom_solve(system, mu)
        oracle = np.linalg.solve(dense_matrix(system, mu), system.assemble_rhs(mu))
        assert np.linalg.norm(X - oracle) <= 1e-9 * np.linalg.norm(oracle)
        res = np.linalg.norm(system.apply(mu, X) - system.assemble_rhs(mu), axis=0)
        assert np.all(res <= 1e-9 * np.linalg.norm(system.assemble_rhs(mu), axis=0))


def test_fom_solve_at_exact_resonance():
    system = constant_system(np.diag([1.0, 0.0, 2.0]), np.ones(3))
    with pytest.raises(SingularMatrix):
        fom_solve(system, ParameterPoint(1.0))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(-3, 3))
def test_scale_covariance_is_exact_for_powers_of_two(seed, k):
    rng = np.random.default_rng(seed)
    system = random_affine_system(rng, 8, p=2)
    mu = random_point(rng)
    c = 2.0**k
    np.testing.assert_array_equal(fom_solve(system.with_scale(c * system.scale), mu),
                                  fom_solve(system, mu) / c)


def test_scale_covariance_general(rng):
    system = random_affine_system(rng, 8)
    mu = random_point(rng)
    np.testing.assert_allclose(fom_solve(system.with_scale(1e3), mu), fom_solve(system, mu) / 1e3,
                               rtol=1e-14)


def test_bundle_round_trip(tmp_path, rng):
    system = cavity_like(rng, scale=10.0)
    system.grids["train"] = {"kind": "uniform", "f_lo": 0.01, "f_hi": 0.1, "num": 5}
    save_system(system, tmp_path / "sys")
    manifest = json.loads((tmp_path / "sys" / "manifest.json").read_text())
    assert [t["coefficient"] for t in manifest["matrix_terms"]] == ["1.0", "s^2"]
    loaded = load_system(tmp_path / "sys")
    assert loaded.names == ["S", "T"] and loaded.scale == 10.0
    mu = ParameterPoint(0.037)
    np.testing.assert_array_equal(dense_matrix(loaded, mu), dense_matrix(system, mu))
    np.testing.assert_array_equal(loaded.assemble_rhs(mu), system.assemble_rhs(mu))
    assert loaded.grid("train").points == system.grid("train").points


def test_bundle_dense_complex_round_trip(tmp_path, rng):
    system = random_affine_system(rng, 7, p=3)
    save_system(system, tmp_path)
    loaded = load_system(tmp_path / "manifest.json")
    for A, B in zip(system.matrices, loaded.matrices):
        np.testing.assert_array_equal(np.asarray(B), A)
    np.testing.assert_array_equal(loaded.rhs[0], system.rhs[0])


def test_load_rejects_foreign_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(InvalidSpec):
        load_system(tmp_path)
