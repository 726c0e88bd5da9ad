"""Greedy reduced-basis construction driven by an a posteriori estimator.

With the ``proposed`` estimator two sample streams run side by side: ``mu*``
(largest estimated error) enriches the ROM basis ``V`` and ``mu_e*``
(largest residual of the error approximation) enriches the auxiliary basis
``V_r``; the error basis is ``V_e = orth([V_r, V])``. The other estimators
only need the ``mu*`` stream; the randomized one builds its dual basis once
up front.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import estimators as est
from .errors import DegenerateGrid, InvalidSpec, NotConverged, SingularMatrix
from .linalg import SVD_CAP, extend
from .rom import ReducedModel, project
from .system import AffineSystem, ParameterGrid, ParameterPoint

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["iter", "r", "ve_cols", "eps_est", "eps_true", "eff", "mu_star", "mu_e_star",
                  "seconds"]


@dataclass
class GreedyConfig:
    tol: float = 1e-6
    max_iterations: int = 50
    estimator: str = "proposed"
    K: int = 20
    tol_rd: float = 0.5
    rd_max_iterations: int = 20
    realify: bool = True
    seed: int = 0
    initial: str = "random"
    track_true_error: bool = False
    svd_cap: int = SVD_CAP
    jobs: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidSpec("tol must be positive")
        if self.max_iterations < 1:
            raise InvalidSpec("max_iterations must be at least 1")
        if self.estimator not in est.KINDS:
            raise InvalidSpec(f"unknown estimator {self.estimator!r}; expected one of {est.KINDS}")
        if self.initial not in ("random", "endpoints"):
            raise InvalidSpec("initial must be 'random' or 'endpoints'")
        if self.K < 1 or not self.tol_rd > 0:
            raise InvalidSpec("randomized estimator needs K >= 1 and tol_rd > 0")
        if self.jobs < 1:
            raise InvalidSpec("jobs must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GreedyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown greedy options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GreedyIteration:
    iteration: int
    r: int
    ve_cols: int | None
    eps_est: float
    eps_true: float | None
    mu_star: ParameterPoint
    mu_e_star: ParameterPoint | None
    seconds: float

    @property
    def eff(self) -> float | None:
        if self.eps_true is None or not self.eps_true > 0:
            return None
        return self.eps_est / self.eps_true

    def row(self) -> dict:
        fmt = lambda v: "" if v is None else repr(v)
        return {"iter": self.iteration, "r": self.r, "ve_cols": fmt(self.ve_cols),
                "eps_est": repr(self.eps_est), "eps_true": fmt(self.eps_true),
                "eff": fmt(self.eff), "mu_star": str(self.mu_star),
                "mu_e_star": "" if self.mu_e_star is None else str(self.mu_e_star),
                "seconds": repr(self.seconds)}

    @classmethod
    def from_row(cls, row: dict) -> "GreedyIteration":
        opt = lambda v, f=float: None if v in ("", None) else f(v)
        return cls(int(row["iter"]), int(row["r"]), opt(row["ve_cols"], int),
                   float(row["eps_est"]), opt(row["eps_true"]),
                   ParameterPoint.parse(row["mu_star"]),
                   opt(row["mu_e_star"], ParameterPoint.parse), float(row["seconds"]))


@dataclass
class GreedyReport:
    estimator: str
    tol: float
    iterations: list[GreedyIteration] = field(default_factory=list)
    termination: str = "running"
    skipped: list[ParameterPoint] = field(default_factory=list)
    offline_seconds: float = 0.0
    dual_basis_size: int | None = None
    dual_indicators: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    @property
    def final_r(self) -> int:
        return self.iterations[-1].r if self.iterations else 0

    @property
    def eps_est(self) -> np.ndarray:
        return np.array([it.eps_est for it in self.iterations])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            for it in self.iterations:
                writer.writerow(it.row())

    @staticmethod
    def read_csv(path) -> list[GreedyIteration]:
        with open(path, newline="") as fh:
            return [GreedyIteration.from_row(row) for row in csv.DictReader(fh)]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "estimator": self.estimator,
            "tol": self.tol,
            "termination": self.termination,
            "offline_seconds": self.offline_seconds,
            "final_r": self.final_r,
            "skipped": [str(mu) for mu in self.skipped],
            "dual_basis_size": self.dual_basis_size,
            "dual_indicators": self.dual_indicators,
            "config": self.config,
            "iterations": [it.row() for it in self.iterations],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "GreedyReport":
        return cls(d["estimator"], d["tol"],
                   [GreedyIteration.from_row(r) for r in d["iterations"]],
                   d["termination"], [ParameterPoint.parse(s) for s in d["skipped"]],
                   d["offline_seconds"], d.get("dual_basis_size"),
                   d.get("dual_indicators", []), d.get("config", {}))


def select_next_samples(estimates, re_norms=None) -> tuple[int, int | None]:
    """Indices of the next ``mu*`` and ``mu_e*``.

    ``mu*`` maximizes ``estimates`` and ``mu_e*`` maximizes ``re_norms``;
    ties go to the lowest index. When both land on the same point ``mu_e*``
    falls back to the runner-up of ``re_norms``.
    """
    estimates = np.asarray(estimates, dtype=float)
    i_star = int(np.argmax(estimates))
    if re_norms is None:
        return i_star, None
    re_norms = np.asarray(re_norms, dtype=float)
    if len(re_norms) < 2:
        raise DegenerateGrid("two distinct samples are needed but the grid has one point")
    order = np.argsort(-re_norms, kind="stable")
    i_e = int(order[0])
    if i_e == i_star:
        i_e = int(order[1])
    return i_star, i_e


def snapshot(system: AffineSystem, mu: ParameterPoint) -> np.ndarray:
    """All ``p`` port solutions at ``mu`` (scaled right-hand side)."""
    return system.solve(mu)


def _columns(X, realify: bool):
    return np.hstack([X.real, X.imag]) if realify else X


class _Snapshots:
    """FOM solutions cached per grid index; singular points are remembered."""

    def __init__(self, system, points):
        self.system, self.points = system, points
        self.cache: dict[int, np.ndarray] = {}
        self.factors: dict = {}
        self.singular: set[int] = set()

    def get(self, k):
        if k in self.singular:
            return None
        if k not in self.cache:
            try:
                lu = self.system.factorize(self.points[k])
                self.cache[k] = self.system.solve(self.points[k], lu)
                self.factors[k] = lu
            except SingularMatrix:
                log.warning("skipping training point f=%r: matrix is singular",
                            self.points[k].frequency)
                self.singular.add(k)
                return None
        return self.cache[k]


def _enrichment(snaps: _Snapshots, k: int, basis):
    """Directions the snapshot at grid index ``k`` adds to ``range(basis)``.

    Returns ``A^{-1}(B - A x_b)`` with ``x_b`` the Galerkin approximation from
    ``basis``. It spans the same space as the snapshot modulo ``basis`` but
    does not lose the small components next to a near-resonant mode.
    """
    X = snaps.get(k)
    if basis is None or basis.shape[1] == 0:
        return X
    lu = snaps.factors.get(k)
    if lu is None:
        return X
    system, mu = snaps.system, snaps.points[k]
    B = system.assemble_rhs(mu)
    AW = system.apply(mu, basis)
    try:
        z = np.linalg.solve(basis.conj().T @ AW, basis.conj().T @ B)
    except np.linalg.LinAlgError:
        return X
    return lu.solve(B - AW @ z)


def _pick_available(snaps: _Snapshots, ranking, exclude=None):
    """First index in ``ranking`` whose snapshot exists and differs from ``exclude``."""
    for k in ranking:
        k = int(k)
        if k == exclude:
            continue
        X = snaps.get(k)
        if X is not None:
            return k, X
    raise SingularMatrix("no training point with a nonsingular system matrix is left")


def greedy_build(system: AffineSystem, grid: ParameterGrid, cfg: GreedyConfig | None = None,
                 check: bool = True) -> tuple[ReducedModel, GreedyReport]:
    """Build a ROM greedily until the largest estimate over ``grid`` is at most ``cfg.tol``.

    Raises
    ------
    NotConverged
        When ``check`` is set and the loop stops before reaching the
        tolerance; the exception carries the partial report and ROM.
    """
    cfg = cfg or GreedyConfig()
    t_start = time.perf_counter()
    points = list(grid)
    N = len(points)
    kind = cfg.estimator
    two_streams = kind == "proposed"
    if two_streams and N < 2:
        raise DegenerateGrid("the proposed estimator needs at least two training points")
    report = GreedyReport(kind, cfg.tol, config=cfg.to_dict())
    rng = np.random.default_rng(cfg.seed)
    snaps = _Snapshots(system, points)

    if cfg.initial == "endpoints":
        first = [0, N - 1] if N > 1 else [0]
    else:
        first = [int(k) for k in rng.permutation(N)[:2]]

    sigma_cache: dict = {}
    if kind == "standard":
        if system.n > cfg.svd_cap:
            est.extremal_singular_values(np.empty((system.n, system.n)), cap=cfg.svd_cap)
        sigma_cache = _sigma_table(system, points, cfg)
    dual = None
    if kind == "randomized":
        Zr = est.random_vectors(system.n, cfg.K, cfg.seed)
        Vrd, hist = est.build_dual_basis(system, grid, Zr, tol=cfg.tol_rd,
                                         max_iterations=cfg.rd_max_iterations,
                                         realify=cfg.realify, start=first[0])
        dual = (Vrd, Zr)
        report.dual_basis_size = Vrd.shape[1]
        report.dual_indicators = hist.indicators

    ranking = np.array(first + [k for k in range(N) if k not in first])
    i_star, X = _pick_available(snaps, ranking)
    i_e = X_e = None
    if two_streams:
        i_e, X_e = _pick_available(snaps, ranking, exclude=i_star)

    V = Vr = None
    rm = None
    for it in range(1, cfg.max_iterations + 1):
        t_it = time.perf_counter()
        r_old = 0 if V is None else V.shape[1]
        V = extend(V, _columns(_enrichment(snaps, i_star, V), cfg.realify))
        if V.shape[1] == r_old:
            report.termination = "stagnated"
            log.warning("snapshot at f=%r added no new direction", points[i_star].frequency)
            break
        rm = project(system, V)
        if kind == "proposed":
            Vr = extend(Vr, _columns(_enrichment(snaps, i_e, Vr), cfg.realify))
            state = est.proposed_state(est.build_error_subspace(V, Vr))
        elif kind == "randomized":
            state = est.randomized_state(*dual)
        elif kind == "standard":
            state = est.standard_state(cfg.svd_cap)
            state.sigma_cache = sigma_cache
        else:
            state = est.residual_state()
        result = est.estimate_points(system, rm, state, points, error_residuals=two_streams)
        values = result.values.max(axis=1)
        re_vals = result.error_residual_norms.max(axis=1) if two_streams else None
        excluded = sorted(snaps.singular)
        values[excluded] = -np.inf
        if two_streams:
            re_vals[excluded] = -np.inf
        eps = float(values.max())

        eps_true = None
        if cfg.track_true_error:
            live = [k for k in range(N) if snaps.get(k) is not None]
            errs = est.true_errors(system, rm, [points[k] for k in live],
                                   [snaps.cache[k] for k in live])
            eps_true = float(errs.max())

        record = GreedyIteration(it, V.shape[1],
                                 state.error_basis.shape[1] if two_streams else None,
                                 eps, eps_true, points[i_star],
                                 points[i_e] if two_streams else None,
                                 time.perf_counter() - t_it)
        report.iterations.append(record)
        log.info("iter %d: r=%d eps_est=%.3e%s", it, record.r, eps,
                 "" if eps_true is None else f" eps_true={eps_true:.3e}")
        if eps <= cfg.tol:
            report.termination = "converged"
            break

        nxt, nxt_e = select_next_samples(values, re_vals)
        order = np.argsort(-values, kind="stable")
        i_star, X = _pick_available(snaps, [nxt] + [k for k in order if k != nxt])
        if two_streams:
            order_e = np.argsort(-re_vals, kind="stable")
            i_e, X_e = _pick_available(snaps, [nxt_e] + [k for k in order_e if k != nxt_e],
                                       exclude=i_star)
    else:
        report.termination = "max_iterations"

    report.skipped = [points[k] for k in sorted(snaps.singular)]
    report.offline_seconds = time.perf_counter() - t_start
    if rm is None:
        rm = project(system, V)
    if kind == "proposed" and Vr is not None:
        rm.aux["error_basis"] = est.build_error_subspace(V, Vr)
    elif kind == "randomized":
        rm.aux["dual_basis"], rm.aux["random_vectors"] = dual
    rm.info.update({"estimator": kind, "offline_seconds": report.offline_seconds,
                    "iterations": len(report.iterations), "termination": report.termination,
                    "tol": cfg.tol})
    if check and not report.converged:
        raise NotConverged(
            f"{kind} greedy stopped ({report.termination}) after {len(report.iterations)} "
            f"iterations with eps_est={report.iterations[-1].eps_est:.3e} > tol={cfg.tol:g}",
            report=report, rom=rm)
    return rm, report


def _sigma_table(system, points, cfg) -> dict:
    """Extremal singular values at every training point (dense SVDs, optionally threaded)."""
    def one(mu):
        return est.extremal_singular_values(system.assemble(mu), cap=cfg.svd_cap)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as pool:
            values = list(pool.map(one, points))
    else:
        values = [one(mu) for mu in points]
    return dict(zip(points, values))
