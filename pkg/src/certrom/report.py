"""Sweeps, effectivity summaries and timing comparisons."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .estimators import ErrorCertificate
from .rom import ReducedModel
from .system import AffineSystem, ParameterPoint

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class SweepResult:
    """Per-point, per-port ROM outputs; ``outputs`` has shape ``(N, p, q)``.

    ``estimates`` and ``true_errors`` are filled in by validation runs and are
    ``None`` for a plain online sweep.
    """

    points: list[ParameterPoint]
    outputs: np.ndarray
    state_norms: np.ndarray
    estimates: np.ndarray | None = None
    true_errors: np.ndarray | None = None
    offline_seconds: float = 0.0
    online_seconds: float = 0.0

    @property
    def p(self) -> int:
        return self.state_norms.shape[1]

    @property
    def q(self) -> int:
        return self.outputs.shape[2]

    @property
    def effectivity(self) -> np.ndarray | None:
        if self.estimates is None or self.true_errors is None:
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            eff = self.estimates / self.true_errors
        eff[~(self.true_errors > 0)] = np.nan
        return eff

    def __len__(self):
        return len(self.points) * self.p

    def columns(self) -> list[str]:
        n_extra = len(self.points[0].extra) if self.points else 0
        cols = ["point", "f"] + [f"d{i + 1}" for i in range(n_extra)] + ["port", "state_norm"]
        for k in range(self.q):
            cols += [f"y{k}_re", f"y{k}_im"]
        return cols + ["estimate", "true_error", "effectivity"]

    def write_csv(self, path) -> None:
        eff = self.effectivity
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            for k, mu in enumerate(self.points):
                for i in range(self.p):
                    row = [k, *map(repr, mu.to_list()), i, repr(float(self.state_norms[k, i]))]
                    for y in self.outputs[k, i]:
                        row += [repr(float(y.real)), repr(float(y.imag))]
                    row += [_opt(self.estimates, k, i), _opt(self.true_errors, k, i),
                            _opt(eff, k, i)]
                    writer.writerow(row)

    @classmethod
    def read_csv(cls, path, p: int | None = None) -> "SweepResult":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        n_extra = sum(1 for c in header if c.startswith("d") and c[1:].isdigit())
        q = sum(1 for c in header if c.endswith("_re"))
        ports = sorted({int(r[2 + n_extra]) for r in rows})
        p = p or len(ports)
        N = len(rows) // p if p else 0
        points, norms = [], np.zeros((N, p))
        outputs = np.zeros((N, p, q), dtype=complex)
        est = np.full((N, p), np.nan)
        truth = np.full((N, p), np.nan)
        has_est = has_true = False
        for row in rows:
            k, i = int(row[0]), int(row[2 + n_extra])
            if i == 0:
                points.append(ParameterPoint.from_list(row[1:2 + n_extra]))
            base = 3 + n_extra
            norms[k, i] = float(row[base])
            for j in range(q):
                outputs[k, i, j] = complex(float(row[base + 1 + 2 * j]),
                                           float(row[base + 2 + 2 * j]))
            tail = row[base + 1 + 2 * q:]
            if tail[0] != "":
                est[k, i], has_est = float(tail[0]), True
            if tail[1] != "":
                truth[k, i], has_true = float(tail[1]), True
        return cls(points, outputs, norms, est if has_est else None, truth if has_true else None)

    def summary(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "points": len(self.points), "ports": self.p,
               "outputs": self.q, "offline_seconds": self.offline_seconds,
               "online_seconds": self.online_seconds}
        if self.true_errors is not None:
            out["max_true_error"] = _finite_max(self.true_errors)
        if self.estimates is not None:
            out["max_estimate"] = _finite_max(self.estimates)
        return out


def _opt(arr, k, i) -> str:
    if arr is None or not np.isfinite(arr[k, i]) and not np.isinf(arr[k, i]):
        return ""
    return repr(float(arr[k, i]))


def _finite_max(a) -> float | None:
    a = np.asarray(a, dtype=float)
    a = a[np.isfinite(a)]
    return float(a.max()) if a.size else None


def sweep(rm: ReducedModel, points, outputs=None) -> SweepResult:
    """Online sweep: reduced solves at every point, optional outputs ``y = C x_hat``.

    Only the ROM is touched; ``C`` (``q x n``) is folded into ``C V`` once.
    """
    points = list(points)
    CV = None
    if outputs is not None and np.asarray(outputs).size:
        C = np.atleast_2d(np.asarray(outputs))
        CV = C @ rm.basis
    q = 0 if CV is None else CV.shape[0]
    t0 = time.perf_counter()
    Z, singular = rm.solve_many(points)
    Y = np.einsum("qr,nrp->npq", CV, Z) if CV is not None else np.zeros((len(points), rm.p, 0),
                                                                       dtype=complex)
    online = time.perf_counter() - t0
    for k in np.flatnonzero(singular):
        log.warning("reduced matrix singular at f=%r; outputs set to NaN", points[k].frequency)
    # orthonormal basis: ||V z|| = ||z||
    norms = np.linalg.norm(Z, axis=1) if len(points) else np.zeros((0, rm.p))
    return SweepResult(points, Y, norms, offline_seconds=float(rm.info.get("offline_seconds", 0.0)),
                       online_seconds=online)


@dataclass
class EffectivitySummary:
    count: int
    excluded: int
    max_estimate: float | None
    max_true_error: float | None
    effectivity: float | None
    quantiles: dict

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}


def effectivity_table(certs: list[ErrorCertificate],
                      quantiles=(0.05, 0.5, 0.95)) -> EffectivitySummary:
    """Ratio of maxima ``max estimate / max true error`` plus per-point quantiles.

    Certificates whose estimate is the ``+inf`` sentinel are excluded and
    counted in ``excluded``.
    """
    finite = [c for c in certs if math.isfinite(c.estimate)]
    excluded = len(certs) - len(finite)
    with_truth = [c for c in finite if c.true_error is not None]
    max_est = max((c.estimate for c in finite), default=None)
    max_true = max((c.true_error for c in with_truth), default=None)
    eff = max_est / max_true if max_est is not None and max_true else None
    per_point = np.array([c.effectivity for c in with_truth if c.effectivity is not None])
    qs = ({f"q{int(round(100 * q)):02d}": float(np.quantile(per_point, q)) for q in quantiles}
          if per_point.size else {})
    return EffectivitySummary(len(certs), excluded, max_est, max_true, eff, qs)


@dataclass
class SpeedupSummary:
    points: int
    fom_seconds: float
    offline_seconds: float
    online_seconds: float

    @property
    def fom_per_point(self) -> float:
        return self.fom_seconds / self.points

    @property
    def online_per_point(self) -> float:
        return self.online_seconds / self.points

    @property
    def speedup(self) -> float:
        return self.fom_seconds / (self.offline_seconds + self.online_seconds)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self),
                "fom_per_point": self.fom_per_point, "online_per_point": self.online_per_point,
                "online_fraction": self.online_per_point / self.fom_per_point,
                "speedup": self.speedup}


def speedup_report(system: AffineSystem, rm: ReducedModel, test_points,
                   offline_seconds: float | None = None) -> SpeedupSummary:
    """Brute-force FOM sweep time against offline plus online ROM time."""
    points = list(test_points)
    t0 = time.perf_counter()
    for mu in points:
        system.solve(mu)
    fom = time.perf_counter() - t0
    online = sweep(rm, points).online_seconds
    if offline_seconds is None:
        offline_seconds = float(rm.info.get("offline_seconds", 0.0))
    return SpeedupSummary(len(points), fom, offline_seconds, online)


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, ParameterPoint):
        return obj.to_list()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
