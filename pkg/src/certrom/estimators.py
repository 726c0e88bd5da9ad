"""A posteriori state-error estimators for Galerkin ROMs.

Four estimators share one interface:

``standard``
    residual norm divided by the smallest singular value of ``A(mu)``;
``residual``
    the bare residual norm;
``randomized``
    root mean square of ``K`` randomized dual-weighted residuals, the duals
    taken from a reduced model of ``A(mu)^T xi_i = z_i``;
``proposed``
    norm of the Galerkin approximation ``e~ = V_e z_e`` of the error from the
    residual system ``A(mu) e = r``, with ``V_e = orth([V_r, V])``.

All of them are evaluated per (point, port). :func:`estimate_points` is the
batched workhorse used by the greedy loop; the per-port functions wrap it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyBasis,
    InvalidSpec,
    SingularMatrix,
    SingularReducedMatrix,
)
from .linalg import PIVOT_TOL, SVD_CAP, extend, extremal_singular_values, orth, real_split
from .rom import ReducedModel, theta_matrix
from .system import AffineSystem, ParameterGrid, ParameterPoint

KINDS = ("standard", "residual", "randomized", "proposed")
CHUNK = 64


@dataclass
class ErrorCertificate:
    mu: ParameterPoint
    port: int
    estimate: float
    true_error: float | None = None
    effectivity: float | None = None

    def __post_init__(self):
        if self.true_error is not None and self.true_error > 0:
            self.effectivity = self.estimate / self.true_error
        else:
            self.effectivity = None


@dataclass
class EstimatorState:
    """Everything an estimator needs beyond the ROM itself.

    ``error_basis`` is ``V_e`` (proposed), ``dual_basis`` is ``V_rd`` and
    ``random_vectors`` the ``n x K`` matrix of frozen Gaussian samples
    (randomized). Singular values for the standard estimator are cached per
    parameter point since they do not depend on the ROM.
    """

    kind: str
    error_basis: np.ndarray | None = None
    dual_basis: np.ndarray | None = None
    random_vectors: np.ndarray | None = None
    svd_cap: int = SVD_CAP
    sigma_cache: dict = field(default_factory=dict, repr=False)
    _bound: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown estimator kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "proposed" and self.error_basis is None:
            raise InvalidSpec("the proposed estimator needs an error basis V_e")
        if self.kind == "randomized":
            if self.dual_basis is None or self.random_vectors is None:
                raise InvalidSpec("the randomized estimator needs V_rd and the random vectors")
            if self.random_vectors.ndim != 2 or self.random_vectors.shape[1] < 1:
                raise InvalidSpec("need at least one random vector")


def standard_state(svd_cap: int = SVD_CAP) -> EstimatorState:
    return EstimatorState("standard", svd_cap=svd_cap)


def residual_state() -> EstimatorState:
    return EstimatorState("residual")


def proposed_state(error_basis) -> EstimatorState:
    return EstimatorState("proposed", error_basis=np.asarray(error_basis))


def randomized_state(dual_basis, random_vectors) -> EstimatorState:
    return EstimatorState("randomized", dual_basis=np.asarray(dual_basis),
                          random_vectors=np.asarray(random_vectors, dtype=float))


def random_vectors(n: int, K: int, seed: int = 0) -> np.ndarray:
    """``n x K`` standard normal samples (identity covariance)."""
    if K < 1:
        raise InvalidSpec("K must be at least 1")
    return np.random.default_rng(seed).standard_normal((n, K))


def build_error_subspace(V, V_r) -> np.ndarray:
    """``V_e = orth([V_r, V])``."""
    V, V_r = np.asarray(V), np.asarray(V_r)
    if V.shape[0] != V_r.shape[0]:
        raise DimensionMismatch(f"V has {V.shape[0]} rows, V_r has {V_r.shape[0]}")
    return orth(np.hstack([V_r, V]))


@dataclass
class Estimates:
    """Batched estimator output over ``N`` points and ``p`` ports.

    ``values`` holds ``inf`` where no finite estimate exists (standard
    estimator at a resonance, or a singular reduced matrix).
    """

    values: np.ndarray
    residual_norms: np.ndarray
    reduced_singular: np.ndarray
    error_residual_norms: np.ndarray | None = None
    e_tilde: np.ndarray | None = None


def _bind(system: AffineSystem, rm: ReducedModel, state: EstimatorState) -> dict:
    """Precompute the ROM-dependent reduced terms of ``state``; cached per ROM."""
    if state._bound is not None and state._bound[0] is rm:
        return state._bound[1]
    V = rm.basis
    terms = {"AV": [Aq @ V for Aq in system.matrices],
             "Q": np.array(system.rhs)}
    if state.kind == "proposed":
        Ve = state.error_basis
        if Ve.shape[0] != system.n:
            raise DimensionMismatch("error basis has the wrong row count")
        Veh = Ve.conj().T
        AVe = [Aq @ Ve for Aq in system.matrices]
        terms["AVe"] = AVe
        terms["Ae"] = np.array([Veh @ X for X in AVe])
        terms["Ae_cross"] = np.array([Veh @ X for X in terms["AV"]])
        terms["be"] = np.array([Veh @ Q for Q in system.rhs])
    elif state.kind == "randomized":
        Vd = state.dual_basis
        Vdh = Vd.conj().T
        terms["Ad"] = np.array([Vdh @ (Aq @ Vd) for Aq in system.matrices])
        terms["Ad_cross"] = np.array([Vdh @ X for X in terms["AV"]])
        terms["bd"] = np.array([Vdh @ Q for Q in system.rhs])
        terms["zd"] = Vd.T @ state.random_vectors
    state._bound = (rm, terms)
    return terms


def _sigmas(system: AffineSystem, state: EstimatorState, mu: ParameterPoint):
    if mu not in state.sigma_cache:
        state.sigma_cache[mu] = extremal_singular_values(system.assemble(mu), cap=state.svd_cap)
    return state.sigma_cache[mu]


def estimate_points(system: AffineSystem, rm: ReducedModel, state: EstimatorState, points,
                    error_residuals: bool = False, keep_vectors: bool = False) -> Estimates:
    """Evaluate the estimator of ``state`` at every point and port.

    Parameters
    ----------
    error_residuals
        Also compute ``||r(mu) - A(mu) e~(mu)||`` (proposed only), the
        indicator that picks the next error-basis sample.
    keep_vectors
        Keep the ``(N, n, p)`` array of ``e~`` (proposed only).
    """
    points = list(points)
    N, p, n = len(points), rm.p, system.n
    if state.kind == "standard" and n > state.svd_cap:
        extremal_singular_values(np.empty((n, n)), cap=state.svd_cap)  # raises DimensionTooLarge
    values = np.full((N, p), np.inf)
    rnorms = np.full((N, p), np.nan)
    renorms = np.full((N, p), np.nan) if error_residuals else None
    e_keep = np.full((N, n, p), np.nan, dtype=complex) if keep_vectors else None
    terms = _bind(system, rm, state)
    Z, singular = rm.solve_many(points)

    for start in range(0, N, CHUNK):
        sl = slice(start, min(start + CHUNK, N))
        pts = points[sl]
        Th = theta_matrix(system.coefficients, pts)
        Thb = theta_matrix(system.rhs_coefficients, pts) / system.scale
        Zc = np.nan_to_num(Z[sl])
        R = np.einsum("kq,qip->kip", Thb, terms["Q"])
        for q, AV in enumerate(terms["AV"]):
            R -= Th[:, q, None, None] * (AV @ Zc)
        rn = np.linalg.norm(R, axis=1)
        rnorms[sl] = rn

        if state.kind == "residual":
            vals = rn
        elif state.kind == "standard":
            vals = np.empty_like(rn)
            for k, mu in enumerate(pts):
                smin, smax = _sigmas(system, state, mu)
                vals[k] = np.inf if smin < PIVOT_TOL * smax else rn[k] / smin
        elif state.kind == "proposed":
            A = np.einsum("kq,qij->kij", Th, terms["Ae"])
            rt = np.einsum("kq,qip->kip", Thb, terms["be"])
            rt -= np.einsum("kq,qij,kjp->kip", Th, terms["Ae_cross"], Zc)
            Ze = _batched_solve(A, rt)
            E = np.einsum("ij,kjp->kip", state.error_basis, np.nan_to_num(Ze))
            vals = np.linalg.norm(E, axis=1)
            vals[~np.all(np.isfinite(Ze), axis=(1, 2))] = np.inf
            if error_residuals:
                Re = R.copy()
                for q, AVe in enumerate(terms["AVe"]):
                    Re -= Th[:, q, None, None] * (AVe @ np.nan_to_num(Ze))
                renorms[sl] = np.linalg.norm(Re, axis=1)
            if keep_vectors:
                e_keep[sl] = E
        else:
            Ad = np.einsum("kq,qij->kij", Th, terms["Ad"])
            rd = np.einsum("kq,qip->kip", Thb, terms["bd"])
            rd -= np.einsum("kq,qij,kjp->kip", Th, terms["Ad_cross"], Zc)
            zd = np.broadcast_to(terms["zd"], (len(pts),) + terms["zd"].shape)
            Xi = _batched_solve(np.swapaxes(Ad, 1, 2), zd)  # reduced duals, (k, r_d, K)
            inner = np.einsum("kjK,kjp->kKp", np.nan_to_num(Xi), rd)
            vals = np.sqrt(np.mean(np.abs(inner) ** 2, axis=1))
            vals[~np.all(np.isfinite(Xi), axis=(1, 2))] = np.inf
        values[sl] = vals

    values[singular] = np.inf
    return Estimates(values, rnorms, singular, renorms, e_keep)


def _batched_solve(A, B):
    try:
        X = np.linalg.solve(A, B)
    except np.linalg.LinAlgError:
        X = np.full(np.broadcast_shapes(A.shape[:-1], B.shape[:-2] + (B.shape[-2],)) + B.shape[-1:],
                    np.nan, dtype=np.result_type(A, B))
        for k in range(A.shape[0]):
            try:
                X[k] = np.linalg.solve(A[k], B[k])
            except np.linalg.LinAlgError:
                pass
    return X


def _certificate(estimates: Estimates, mu, port, true_err=None) -> ErrorCertificate:
    return ErrorCertificate(mu, port, float(estimates.values[0, port]), true_err)


def _check_port(rm, port):
    if not 0 <= port < rm.p:
        raise DimensionMismatch(f"port {port} out of range for p={rm.p}")


def _check_finite(estimates: Estimates, mu, port, what):
    if estimates.reduced_singular[0]:
        raise SingularReducedMatrix(f"reduced matrix singular at f={mu.frequency!r}")
    if not np.isfinite(estimates.values[0, port]):
        raise SingularReducedMatrix(f"reduced {what} system singular at f={mu.frequency!r}")


def standard_estimate(system, rm, mu, port=0, state: EstimatorState | None = None):
    """``||r|| / sigma_min(A(mu))``; ``inf`` when ``sigma_min < 1e-14 sigma_max``."""
    _check_port(rm, port)
    state = state or standard_state()
    return _certificate(estimate_points(system, rm, state, [mu]), mu, port)


def residual_estimate(system, rm, mu, port=0):
    _check_port(rm, port)
    return _certificate(estimate_points(system, rm, residual_state(), [mu]), mu, port)


def proposed_estimate(system, rm, state: EstimatorState, mu, port=0):
    """Returns the certificate and the error approximation ``e~`` (length ``n``)."""
    _check_port(rm, port)
    if state.kind != "proposed":
        raise InvalidSpec("proposed_estimate needs a proposed-kind state")
    est = estimate_points(system, rm, state, [mu], keep_vectors=True)
    _check_finite(est, mu, port, "residual")
    return _certificate(est, mu, port), est.e_tilde[0, :, port]


def randomized_estimate(system, rm, state: EstimatorState, mu, port=0):
    _check_port(rm, port)
    if state.kind != "randomized":
        raise InvalidSpec("randomized_estimate needs a randomized-kind state")
    est = estimate_points(system, rm, state, [mu])
    _check_finite(est, mu, port, "dual")
    return _certificate(est, mu, port)


def error_residual(system: AffineSystem, mu: ParameterPoint, e_tilde, r) -> np.ndarray:
    """``r - A(mu) e~``, evaluated term by term."""
    e_tilde, r = np.asarray(e_tilde), np.asarray(r)
    if e_tilde.shape != r.shape or e_tilde.shape[0] != system.n:
        raise DimensionMismatch(f"shapes {e_tilde.shape} and {r.shape} do not match n={system.n}")
    return r - system.apply(mu, e_tilde)


def true_error(system, rm, mu, port=0) -> float:
    """``||X_port(mu) - V z_port(mu)||``; needs a full-order solve."""
    _check_port(rm, port)
    x = system.solve(mu)[:, port]
    return float(np.linalg.norm(x - rm.reconstruct(rm.solve(mu)[:, port])))


def true_errors(system, rm, points, solutions=None) -> np.ndarray:
    """``(N, p)`` true errors; ``solutions`` may supply cached FOM states."""
    points = list(points)
    Z, singular = rm.solve_many(points)
    out = np.full((len(points), rm.p), np.inf)
    for k, mu in enumerate(points):
        X = solutions[k] if solutions is not None else system.solve(mu)
        if not singular[k]:
            out[k] = np.linalg.norm(X - rm.basis @ Z[k], axis=0)
    return out


def certify(system, rm, state, points, with_true_error: bool = True) -> list[ErrorCertificate]:
    """Certificates for every (point, port), optionally with the true error attached."""
    points = list(points)
    est = estimate_points(system, rm, state, points)
    truth = true_errors(system, rm, points) if with_true_error else None
    return [ErrorCertificate(mu, i, float(est.values[k, i]),
                             None if truth is None else float(truth[k, i]))
            for k, mu in enumerate(points) for i in range(rm.p)]


@dataclass
class DualBasisHistory:
    indicators: list[float] = field(default_factory=list)
    samples: list[int] = field(default_factory=list)
    sizes: list[int] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)


def build_dual_basis(system: AffineSystem, grid: ParameterGrid, Zr, tol: float = 0.5,
                     max_iterations: int = 20, realify: bool = True, start: int = 0):
    """Greedy reduced basis ``V_rd`` for the ``K`` random dual systems.

    At the selected point the ``K`` dual solutions ``A(mu)^{-T} z_i`` are
    appended. The indicator is the worst relative dual residual
    ``max_i ||z_i - A(mu)^T xi~_i|| / ||z_i||`` over the grid; the loop stops
    once it drops to ``tol``.

    Returns ``(V_rd, history)``.
    """
    Zr = np.asarray(Zr, dtype=float)
    points = list(grid)
    N = len(points)
    Vd = None
    history = DualBasisHistory()
    Th = theta_matrix(system.coefficients, points)
    znorm2 = np.sum(Zr ** 2, axis=0)
    idx = start
    for _ in range(max_iterations):
        try:
            lu = system.factorize(points[idx])
        except SingularMatrix:
            history.skipped.append(idx)
            Th[idx] = np.nan
            candidates = [k for k in range(N) if k not in history.skipped]
            if not candidates:
                raise
            idx = candidates[0]
            continue
        new = lu.solve(Zr.astype(complex), transpose=True).conj()
        if realify:
            new = np.hstack([new.real, new.imag])
        grown = extend(Vd, new)
        if Vd is not None and grown.shape[1] == Vd.shape[1]:
            break
        Vd = grown
        history.samples.append(idx)
        history.sizes.append(Vd.shape[1])

        # ||z - M xi||^2 expanded with affine Gram matrices, M = sum_q theta_q A_q^T conj(Vd)
        W = [Aq.T @ Vd.conj() for Aq in system.matrices]
        zW = np.array([Zr.T @ Wq for Wq in W])  # (Q, K, rd)
        G = np.array([[Wq.conj().T @ Wp for Wp in W] for Wq in W])  # (Q, Q, rd, rd)
        Ad = np.array([Vd.conj().T @ (Aq @ Vd) for Aq in system.matrices])
        zd = Vd.T @ Zr
        worst = np.zeros(N)
        for k in range(N):
            if np.isnan(Th[k]).any():
                continue
            A = np.tensordot(Th[k], Ad, axes=1)
            try:
                xi = np.linalg.solve(A.T, zd)
            except np.linalg.LinAlgError:
                worst[k] = np.inf
                continue
            MzW = np.tensordot(Th[k], zW, axes=1)  # z^T M, (K, rd)
            Gk = np.einsum("q,p,qpij->ij", Th[k].conj(), Th[k], G)
            cross = np.einsum("Kj,jK->K", MzW, xi)
            quad = np.einsum("jK,jl,lK->K", xi.conj(), Gk, xi).real
            res2 = np.maximum(znorm2 - 2 * cross.real + quad, 0.0)
            worst[k] = math.sqrt(np.max(res2 / znorm2))
        history.indicators.append(float(np.max(worst)))
        idx = int(np.argmax(worst))
        if history.indicators[-1] <= tol:
            break
    if Vd is None:
        raise EmptyBasis("no dual snapshot could be computed")
    return Vd, history
