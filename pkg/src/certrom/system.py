"""Affinely parametric full-order systems ``A(mu) X(mu) = B(mu)``.

A parameter point carries a frequency ``f`` in Hz (``s = j 2 pi f``) and an
optional tuple of real parameters such as dielectric constants. Matrix and
right-hand-side terms are weighted by coefficient functions drawn from a
small closed algebra, see :class:`Coefficient`.
"""

from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import DimensionMismatch, InvalidSpec
from .linalg import Factorization, factorize

MANIFEST = "manifest.json"
SYSTEM_FORMAT = "certrom-system"
SYSTEM_VERSION = 1


@dataclass(frozen=True)
class ParameterPoint:
    frequency: float
    extra: tuple[float, ...] = ()

    def __post_init__(self):
        if not (self.frequency > 0 and math.isfinite(self.frequency)):
            raise InvalidSpec(f"frequency must be positive, got {self.frequency}")
        object.__setattr__(self, "extra", tuple(float(v) for v in self.extra))

    @property
    def s(self) -> complex:
        return 2j * math.pi * self.frequency

    def to_list(self) -> list[float]:
        return [self.frequency, *self.extra]

    @classmethod
    def from_list(cls, values) -> "ParameterPoint":
        values = [float(v) for v in values]
        return cls(values[0], tuple(values[1:]))

    def __str__(self):
        return ";".join(repr(v) for v in self.to_list())

    @classmethod
    def parse(cls, text: str) -> "ParameterPoint":
        return cls.from_list(text.split(";"))


@dataclass(frozen=True)
class ParameterDomain:
    f_lo: float
    f_hi: float
    extra_bounds: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if not (0 < self.f_lo < self.f_hi):
            raise InvalidSpec(f"need 0 < f_lo < f_hi, got [{self.f_lo}, {self.f_hi}]")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.extra_bounds)
        for lo, hi in bounds:
            if lo > hi:
                raise InvalidSpec(f"empty parameter interval [{lo}, {hi}]")
        object.__setattr__(self, "extra_bounds", bounds)

    def contains(self, mu: ParameterPoint, rtol: float = 1e-12) -> bool:
        slack = rtol * self.f_hi
        if not (self.f_lo - slack <= mu.frequency <= self.f_hi + slack):
            return False
        if len(mu.extra) != len(self.extra_bounds):
            return False
        return all(lo - rtol * abs(lo) <= v <= hi + rtol * abs(hi)
                   for v, (lo, hi) in zip(mu.extra, self.extra_bounds))

    def to_dict(self) -> dict:
        return {"f_lo": self.f_lo, "f_hi": self.f_hi,
                "extra_bounds": [list(b) for b in self.extra_bounds]}

    @classmethod
    def from_dict(cls, d) -> "ParameterDomain":
        return cls(float(d["f_lo"]), float(d["f_hi"]),
                   tuple(tuple(b) for b in d.get("extra_bounds", ())))


@dataclass(frozen=True)
class ParameterGrid:
    """Ordered, duplicate-free list of parameter points (a training or test set)."""

    points: tuple[ParameterPoint, ...]
    provenance: str = "generated"

    def __post_init__(self):
        pts = tuple(self.points)
        if not pts:
            raise InvalidSpec("parameter grid is empty")
        if len(set(pts)) != len(pts):
            raise InvalidSpec("parameter grid contains duplicate points")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([p.frequency for p in self.points])

    @classmethod
    def uniform(cls, f_lo: float, f_hi: float, num: int,
                extra: Sequence[Sequence[float]] = ()) -> "ParameterGrid":
        """Uniform frequency samples, Cartesian product with the ``extra`` value lists."""
        freqs = np.linspace(f_lo, f_hi, num)
        pts = [ParameterPoint(float(f), tuple(rest))
               for f, *rest in itertools.product(freqs, *extra)]
        return cls(tuple(pts))

    @classmethod
    def midpoints(cls, f_lo: float, f_hi: float, num: int) -> "ParameterGrid":
        """``num`` cell-centred frequencies; disjoint from ``uniform`` on a matching band."""
        edges = np.linspace(f_lo, f_hi, num + 1)
        return cls(tuple(ParameterPoint(float(f)) for f in 0.5 * (edges[1:] + edges[:-1])))

    @classmethod
    def random(cls, domain: ParameterDomain, num: int, seed: int = 0) -> "ParameterGrid":
        rng = np.random.default_rng(seed)
        pts = []
        for _ in range(num):
            f = rng.uniform(domain.f_lo, domain.f_hi)
            extra = tuple(rng.uniform(lo, hi) for lo, hi in domain.extra_bounds)
            pts.append(ParameterPoint(float(f), extra))
        return cls(tuple(pts))

    def to_list(self) -> list[list[float]]:
        return [p.to_list() for p in self.points]

    @classmethod
    def from_list(cls, rows, provenance: str = "file") -> "ParameterGrid":
        return cls(tuple(ParameterPoint.from_list(r) for r in rows), provenance)

    @classmethod
    def from_spec(cls, spec: dict) -> "ParameterGrid":
        """Build a grid from a manifest/config entry.

        Accepted forms: ``{"points": [[f, d1, ...], ...]}``,
        ``{"kind": "uniform", "f_lo", "f_hi", "num", "extra": [[...], ...]}``,
        ``{"kind": "midpoints", "f_lo", "f_hi", "num"}`` and
        ``{"kind": "file", "path": ...}`` (JSON list of rows).
        """
        if "points" in spec:
            return cls.from_list(spec["points"], provenance="file")
        kind = spec.get("kind", "uniform")
        if kind == "uniform":
            return cls.uniform(float(spec["f_lo"]), float(spec["f_hi"]), int(spec["num"]),
                               spec.get("extra", ()))
        if kind == "midpoints":
            return cls.midpoints(float(spec["f_lo"]), float(spec["f_hi"]), int(spec["num"]))
        if kind == "file":
            rows = json.loads(Path(spec["path"]).read_text())
            return cls.from_list(rows, provenance="file")
        raise InvalidSpec(f"unknown grid kind {kind!r}")


_FACTOR = re.compile(r"^(?:s(?:\^(\d+))?|d(\d+)/([^*]+)|([-+0-9.eE]+))$")


@dataclass(frozen=True)
class Coefficient:
    """``const * s**s_power * (d_i / ref)``, the coefficient algebra of affine terms.

    String form (used in manifests): factors joined by ``*``, e.g. ``"1"``,
    ``"s"``, ``"s^2"``, ``"s^2*d1/4.5"`` (``d1`` is the first extra parameter).
    """

    const: float = 1.0
    s_power: int = 0
    ratio: int | None = None
    ref: float = 1.0

    def __post_init__(self):
        if self.s_power < 0:
            raise InvalidSpec("negative powers of s are not supported")
        if self.ratio is not None and not self.ref > 0:
            raise InvalidSpec("reference value of a parameter ratio must be positive")

    def __call__(self, mu: ParameterPoint) -> complex:
        value = self.const * mu.s ** self.s_power
        if self.ratio is not None:
            if self.ratio >= len(mu.extra):
                raise InvalidSpec(f"coefficient {self} needs parameter d{self.ratio + 1}")
            value *= mu.extra[self.ratio] / self.ref
        return complex(value)

    def __str__(self):
        parts = []
        if self.const != 1.0 or (self.s_power == 0 and self.ratio is None):
            parts.append(repr(float(self.const)))
        if self.s_power == 1:
            parts.append("s")
        elif self.s_power > 1:
            parts.append(f"s^{self.s_power}")
        if self.ratio is not None:
            parts.append(f"d{self.ratio + 1}/{self.ref!r}")
        return "*".join(parts)

    @classmethod
    def parse(cls, text: str) -> "Coefficient":
        const, power, ratio, ref = 1.0, 0, None, 1.0
        for token in str(text).replace(" ", "").split("*"):
            m = _FACTOR.match(token)
            if not m:
                raise InvalidSpec(f"cannot parse coefficient factor {token!r} in {text!r}")
            if token.startswith("s"):
                power += int(m.group(1) or 1)
            elif m.group(2):
                if ratio is not None:
                    raise InvalidSpec(f"at most one parameter ratio per coefficient: {text!r}")
                ratio, ref = int(m.group(2)) - 1, float(m.group(3))
            else:
                const *= float(m.group(4))
        return cls(const, power, ratio, ref)


def _check_square(A, n):
    if A.shape != (n, n):
        raise DimensionMismatch(f"matrix term has shape {A.shape}, expected {(n, n)}")


@dataclass
class AffineSystem:
    """``A(mu) = sum_q theta_q(mu) A_q`` and ``B(mu) = sum_q phi_q(mu) Q_q / scale``.

    Parameters
    ----------
    matrices, coefficients
        ``n x n`` terms (sparse or dense) and their coefficient functions.
    rhs, rhs_coefficients
        ``n x p`` right-hand-side terms and coefficient functions.
    domain
        Box the parameter points must lie in.
    scale
        Positive divisor applied to the assembled right-hand side. ``None``
        picks :func:`default_scale`.
    """

    matrices: list
    coefficients: list[Coefficient]
    rhs: list
    rhs_coefficients: list[Coefficient]
    domain: ParameterDomain
    scale: float | None = None
    names: list[str] | None = None
    rhs_names: list[str] | None = None
    grids: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.matrices or len(self.matrices) != len(self.coefficients):
            raise DimensionMismatch("need one coefficient per matrix term")
        if not self.rhs or len(self.rhs) != len(self.rhs_coefficients):
            raise DimensionMismatch("need one coefficient per rhs term")
        n = self.matrices[0].shape[0]
        self.matrices = [sp.csr_matrix(A) if sp.issparse(A) else np.asarray(A)
                         for A in self.matrices]
        for A in self.matrices:
            _check_square(A, n)
        self.rhs = [np.asarray(Q.toarray() if sp.issparse(Q) else Q) for Q in self.rhs]
        self.rhs = [Q[:, None] if Q.ndim == 1 else Q for Q in self.rhs]
        p = self.rhs[0].shape[1]
        for Q in self.rhs:
            if Q.shape != (n, p):
                raise DimensionMismatch(f"rhs term has shape {Q.shape}, expected {(n, p)}")
        if self.scale is None:
            self.scale = default_scale(self.rhs, self.rhs_coefficients, self.domain)
        if not self.scale > 0:
            raise InvalidSpec(f"scale must be positive, got {self.scale}")
        if self.names is None:
            self.names = [f"A{q}" for q in range(len(self.matrices))]
        if self.rhs_names is None:
            self.rhs_names = [f"Q{q}" for q in range(len(self.rhs))]

    @property
    def n(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def p(self) -> int:
        return self.rhs[0].shape[1]

    def thetas(self, mu: ParameterPoint) -> np.ndarray:
        return np.array([c(mu) for c in self.coefficients])

    def rhs_thetas(self, mu: ParameterPoint) -> np.ndarray:
        return np.array([c(mu) for c in self.rhs_coefficients]) / self.scale

    def assemble(self, mu: ParameterPoint):
        """``A(mu)``; sparse when every term is sparse."""
        thetas = self.thetas(mu)
        if all(sp.issparse(Aq) for Aq in self.matrices):
            A = self.matrices[0] * thetas[0]
            for theta, Aq in zip(thetas[1:], self.matrices[1:]):
                A = A + Aq * theta
            return A
        return sum(theta * (Aq.toarray() if sp.issparse(Aq) else Aq)
                   for theta, Aq in zip(thetas, self.matrices))

    def assemble_rhs(self, mu: ParameterPoint) -> np.ndarray:
        """``B(mu)`` with the scaling applied."""
        return sum(theta * Q for theta, Q in zip(self.rhs_thetas(mu), self.rhs))

    def apply(self, mu: ParameterPoint, X) -> np.ndarray:
        """``A(mu) @ X`` evaluated term by term, without assembling ``A(mu)``."""
        return sum(theta * (Aq @ X) for theta, Aq in zip(self.thetas(mu), self.matrices))

    def factorize(self, mu: ParameterPoint) -> Factorization:
        return factorize(self.assemble(mu))

    def solve(self, mu: ParameterPoint, factorization: Factorization | None = None) -> np.ndarray:
        """Full-order state ``X(mu)`` (``n x p``), one factorization for all ports."""
        lu = factorization or self.factorize(mu)
        return lu.solve(self.assemble_rhs(mu))

    def with_scale(self, scale: float) -> "AffineSystem":
        return AffineSystem(self.matrices, self.coefficients, self.rhs, self.rhs_coefficients,
                            self.domain, scale, self.names, self.rhs_names, dict(self.grids))

    def with_coefficients(self, coefficients) -> "AffineSystem":
        return AffineSystem(self.matrices, list(coefficients), self.rhs, self.rhs_coefficients,
                            self.domain, self.scale, self.names, self.rhs_names, dict(self.grids))

    def grid(self, name: str) -> ParameterGrid:
        if name not in self.grids:
            raise InvalidSpec(f"system declares no grid named {name!r} (have {sorted(self.grids)})")
        return ParameterGrid.from_spec(self.grids[name])


def fom_solve(system: AffineSystem, mu: ParameterPoint) -> np.ndarray:
    return system.solve(mu)


def default_scale(rhs, rhs_coefficients, domain: ParameterDomain) -> float:
    """``10**max(0, round(log10(max |rhs term| at the upper band edge)))``."""
    corner = ParameterPoint(domain.f_hi, tuple(hi for _, hi in domain.extra_bounds))
    peak = max(float(np.max(np.abs(Q))) * abs(c(corner)) for Q, c in zip(rhs, rhs_coefficients))
    if peak <= 0:
        return 1.0
    return float(10.0 ** max(0, round(math.log10(peak))))


def save_system(system: AffineSystem, directory) -> Path:
    """Write a system bundle: ``manifest.json`` plus one Matrix Market file per term."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    terms = []
    for name, coef, A in zip(system.names, system.coefficients, system.matrices):
        fname = f"{name}.mtx"
        scipy.io.mmwrite(directory / fname, A, precision=17)
        terms.append({"name": name, "coefficient": str(coef), "file": fname})
    rhs_terms = []
    for name, coef, Q in zip(system.rhs_names, system.rhs_coefficients, system.rhs):
        fname = f"{name}.mtx"
        scipy.io.mmwrite(directory / fname, sp.coo_matrix(Q), precision=17)
        rhs_terms.append({"name": name, "coefficient": str(coef), "file": fname})
    manifest = {
        "format": SYSTEM_FORMAT,
        "version": SYSTEM_VERSION,
        "n": system.n,
        "p": system.p,
        "scale": system.scale,
        "domain": system.domain.to_dict(),
        "matrix_terms": terms,
        "rhs_terms": rhs_terms,
        "grids": system.grids,
    }
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_system(directory) -> AffineSystem:
    directory = Path(directory)
    manifest_path = directory / MANIFEST if directory.is_dir() else directory
    directory = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != SYSTEM_FORMAT:
        raise InvalidSpec(f"{manifest_path} is not a certrom system manifest")

    def read(fname):
        M = scipy.io.mmread(directory / fname)
        return sp.csr_matrix(M) if sp.issparse(M) else np.asarray(M)

    terms = manifest["matrix_terms"]
    rhs_terms = manifest["rhs_terms"]
    system = AffineSystem(
        matrices=[read(t["file"]) for t in terms],
        coefficients=[Coefficient.parse(t["coefficient"]) for t in terms],
        rhs=[np.asarray(sp.csr_matrix(read(t["file"])).toarray()) for t in rhs_terms],
        rhs_coefficients=[Coefficient.parse(t["coefficient"]) for t in rhs_terms],
        domain=ParameterDomain.from_dict(manifest["domain"]),
        scale=float(manifest["scale"]),
        names=[t["name"] for t in terms],
        rhs_names=[t["name"] for t in rhs_terms],
        grids=manifest.get("grids", {}),
    )
    if system.n != manifest["n"] or system.p != manifest["p"]:
        raise DimensionMismatch(f"{manifest_path}: declared shape does not match the matrix files")
    return system
