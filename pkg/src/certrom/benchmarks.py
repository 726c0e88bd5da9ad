"""Synthetic resonant benchmarks with ``A(s) = S + s U + s^2 T`` structure.

The cavity families are linear finite elements on a uniform 1-D mesh or a
tensor-product 2-D mesh with homogeneous Dirichlet boundaries, so the
generalized spectrum of ``(S, T)`` is known in closed form and resonances
can be placed in the frequency band deliberately.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import InvalidSpec
from .system import AffineSystem, Coefficient, ParameterDomain

FAMILIES = ("resonant_cavity", "damped_cavity", "three_param_dielectric", "random_dense")
MASS_KINDS = ("consistent", "identity")

# element fractions [start, stop) of the two dielectric inserts along x
DIELECTRIC_REGIONS = ((0.2, 0.4), (0.6, 0.8))


@dataclass(frozen=True)
class BenchmarkSpec:
    """Parameters of a synthetic system.

    The band is either given explicitly (``f_lo``, ``f_hi``) or placed around
    the 1-based resonance indices ``modes = (first, last)``: the edges sit
    halfway between neighbouring resonance frequencies.
    """

    family: str
    n: int
    p: int = 1
    f_lo: float | None = None
    f_hi: float | None = None
    modes: tuple[int, int] | None = None
    dims: int = 1
    mass: str = "consistent"
    length: float | None = None
    wave_speed: float = 1.0
    operator_scale: float = 1.0
    eta: float | None = None
    d_ref: float = 1.0
    d_bounds: tuple[tuple[float, float], ...] = ((0.8, 1.2), (0.8, 1.2))
    port_nnz: int = 3
    scale: float | None = None
    train_points: int = 101
    test_points: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.n < 4:
            raise InvalidSpec("n must be at least 4")
        if self.p < 1:
            raise InvalidSpec("p must be at least 1")
        if self.dims not in (1, 2):
            raise InvalidSpec("dims must be 1 or 2")
        if self.mass not in MASS_KINDS:
            raise InvalidSpec(f"mass must be one of {MASS_KINDS}")
        if (self.f_lo is None) != (self.f_hi is None):
            raise InvalidSpec("give both f_lo and f_hi, or neither")
        if self.f_lo is not None and not (0 < self.f_lo < self.f_hi):
            raise InvalidSpec(f"invalid band [{self.f_lo}, {self.f_hi}]: need 0 < f_lo < f_hi")
        if self.modes is not None:
            first, last = self.modes
            if not 1 <= first <= last <= self.n:
                raise InvalidSpec(f"invalid mode range {self.modes}")
            object.__setattr__(self, "modes", (int(first), int(last)))
        for name in ("wave_speed", "operator_scale", "d_ref"):
            if not getattr(self, name) > 0:
                raise InvalidSpec(f"{name} must be positive")
        if self.eta is not None and self.eta < 0:
            raise InvalidSpec("eta must be non-negative")
        if self.length is not None and not self.length > 0:
            raise InvalidSpec("length must be positive")
        if self.port_nnz < 1:
            raise InvalidSpec("port_nnz must be at least 1")
        if self.train_points < 1 or self.test_points < 1:
            raise InvalidSpec("grids need at least one point")
        object.__setattr__(self, "d_bounds", tuple(tuple(map(float, b)) for b in self.d_bounds))
        if self.family == "three_param_dielectric" and len(self.d_bounds) != 2:
            raise InvalidSpec("three_param_dielectric needs bounds for d1 and d2")
        self.grid_shape  # validates 2-D factorization

    @property
    def damping(self) -> float:
        if self.eta is not None:
            return self.eta
        return 0.05 if self.family == "damped_cavity" else 0.0

    @property
    def grid_shape(self) -> tuple[int, ...]:
        if self.dims == 1 or self.family == "random_dense":
            return (self.n,)
        nx = max(d for d in range(1, math.isqrt(self.n) + 1) if self.n % d == 0)
        if nx < 2:
            raise InvalidSpec(f"n={self.n} has no 2-D factorization nx*ny with nx >= 2")
        return (nx, self.n // nx)

    @property
    def spacing(self) -> float:
        nx = self.grid_shape[0]
        return 1.0 if self.length is None else self.length / (nx + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes"] = list(self.modes) if self.modes else None
        d["d_bounds"] = [list(b) for b in self.d_bounds]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown benchmark fields: {sorted(unknown)}")
        d = dict(d)
        if d.get("modes") is not None:
            d["modes"] = tuple(d["modes"])
        if "d_bounds" in d:
            d["d_bounds"] = tuple(tuple(b) for b in d["d_bounds"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None


def _elements_1d(m: int, h: float, mass: str, regions=None):
    """Stiffness and mass of ``m`` interior nodes, optionally split by element region.

    Returns ``K`` and a list of mass matrices, one per region label (the
    unlabelled remainder first) when ``regions`` is given.
    """
    n_el = m + 1
    k_loc = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    m_loc = (h / 6 * np.array([[2.0, 1.0], [1.0, 2.0]]) if mass == "consistent"
             else h / 2 * np.eye(2))
    label = np.zeros(n_el, dtype=int)
    for g, (lo, hi) in enumerate(regions or (), start=1):
        label[int(round(lo * n_el)):int(round(hi * n_el))] = g
    rows, cols, kv, mv, lab = [], [], [], [], []
    for e in range(n_el):
        nodes = (e - 1, e)
        for a in range(2):
            for b in range(2):
                i, j = nodes[a], nodes[b]
                if 0 <= i < m and 0 <= j < m:
                    rows.append(i); cols.append(j)
                    kv.append(k_loc[a, b]); mv.append(m_loc[a, b]); lab.append(label[e])
    rows, cols, lab = np.array(rows), np.array(cols), np.array(lab)
    K = sp.csr_matrix((kv, (rows, cols)), shape=(m, m))
    mv = np.array(mv)
    masses = [sp.csr_matrix((np.where(lab == g, mv, 0.0), (rows, cols)), shape=(m, m))
              for g in range(len(regions or ()) + 1)]
    for M in masses:
        M.eliminate_zeros()
    return K, masses


def _eigs_1d(m: int, h: float, mass: str) -> np.ndarray:
    theta = np.arange(1, m + 1) * math.pi / (m + 1)
    k = (2 - 2 * np.cos(theta)) / h
    mm = h * (4 + 2 * np.cos(theta)) / 6 if mass == "consistent" else np.full(m, h)
    return k / mm


def _cavity_matrices(spec: BenchmarkSpec, split: bool):
    h = spec.spacing
    regions = DIELECTRIC_REGIONS if split else None
    shape = spec.grid_shape
    Kx, Mxs = _elements_1d(shape[0], h, spec.mass, regions)
    if spec.dims == 1:
        S, Ts = Kx, Mxs
    else:
        Ky, (My,) = _elements_1d(shape[1], h, spec.mass)
        Mx = sum(Mxs[1:], Mxs[0])
        S = sp.kron(Kx, My) + sp.kron(Mx, Ky)
        Ts = [sp.kron(M, My) for M in Mxs]
    c2 = spec.wave_speed ** 2
    S = spec.operator_scale * sp.csr_matrix(S)
    Ts = [spec.operator_scale / c2 * sp.csr_matrix(T) for T in Ts]
    return S, Ts


def _boundary_mask(spec: BenchmarkSpec) -> np.ndarray:
    shape = spec.grid_shape
    if spec.dims == 1:
        mask = np.zeros(shape[0], dtype=bool)
        mask[[0, -1]] = True
        return mask
    grid = np.zeros(shape, dtype=bool)
    grid[[0, -1], :] = True
    grid[:, [0, -1]] = True
    return grid.ravel()


def _random_dense(spec: BenchmarkSpec, rng):
    n = spec.n
    G = rng.standard_normal((n, n)) / math.sqrt(n)
    H = rng.standard_normal((n, n)) / math.sqrt(n)
    S = spec.operator_scale * (G @ G.T + 0.1 * np.eye(n))
    T = spec.operator_scale / spec.wave_speed ** 2 * (H @ H.T + np.eye(n))
    S, T = 0.5 * (S + S.T), 0.5 * (T + T.T)
    return S, T


def all_resonances(spec: BenchmarkSpec) -> np.ndarray:
    """Every undamped resonance frequency in Hz, ascending."""
    if spec.family == "random_dense":
        S, T = _random_dense(spec, np.random.default_rng(spec.seed))
        lam = sla.eigh(S, T, eigvals_only=True)
    else:
        h = spec.spacing
        shape = spec.grid_shape
        lam = _eigs_1d(shape[0], h, spec.mass)
        if spec.dims == 2:
            lam = np.add.outer(lam, _eigs_1d(shape[1], h, spec.mass)).ravel()
        lam = lam * spec.wave_speed ** 2
    lam = np.sort(lam)
    return np.sqrt(np.maximum(lam, 0.0)) / (2 * math.pi)


def band(spec: BenchmarkSpec) -> tuple[float, float]:
    if spec.f_lo is not None:
        return spec.f_lo, spec.f_hi
    first, last = spec.modes or (2, 4)
    f = all_resonances(spec)
    lo = 0.5 * (f[first - 2] + f[first - 1]) if first > 1 else 0.5 * f[0]
    hi = 0.5 * (f[last - 1] + f[last]) if last < len(f) else 1.05 * f[-1]
    if not 0 < lo < hi:
        raise InvalidSpec(f"mode range {spec.modes} does not give a valid band")
    return float(lo), float(hi)


def reference_resonances(spec: BenchmarkSpec) -> list[float]:
    """Undamped resonance frequencies (Hz) inside the band, at ``d = d_ref``."""
    lo, hi = band(spec)
    f = all_resonances(spec)
    return [float(v) for v in f[(f >= lo) & (f <= hi)]]


def _ports(spec: BenchmarkSpec, rng) -> np.ndarray:
    Q = np.zeros((spec.n, spec.p))
    for j in range(spec.p):
        idx = rng.choice(spec.n, size=min(spec.port_nnz, spec.n), replace=False)
        Q[idx, j] = rng.standard_normal(len(idx))
    return Q


def generate(spec: BenchmarkSpec) -> AffineSystem:
    """Build the affine system described by ``spec`` (bit-identical per seed)."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = band(spec)
    one, s, s2 = Coefficient(), Coefficient(s_power=1), Coefficient(s_power=2)
    extra_bounds = ()
    if spec.family == "random_dense":
        S, T = _random_dense(spec, rng)
        matrices, coefs, names = [S, T], [one, s2], ["S", "T"]
        if spec.damping > 0:
            W = rng.standard_normal((spec.n, 2)) / math.sqrt(spec.n)
            matrices.insert(1, spec.damping * spec.operator_scale / spec.wave_speed * (W @ W.T))
            coefs.insert(1, s)
            names.insert(1, "U")
    else:
        split = spec.family == "three_param_dielectric"
        S, Ts = _cavity_matrices(spec, split)
        matrices, coefs, names = [S], [one], ["S"]
        if spec.damping > 0 or split:
            boundary = _boundary_mask(spec).astype(float)
            U = spec.damping * spec.operator_scale * spec.spacing / spec.wave_speed * sp.diags(boundary)
            matrices.append(sp.csr_matrix(U))
            coefs.append(s)
            names.append("U")
        if split:
            matrices += Ts
            coefs += [s2] + [Coefficient(s_power=2, ratio=g, ref=spec.d_ref) for g in range(2)]
            names += ["T_0", "T_1", "T_2"]
            extra_bounds = spec.d_bounds
        else:
            matrices.append(Ts[0])
            coefs.append(s2)
            names.append("T")
    Q = _ports(spec, rng)
    domain = ParameterDomain(lo, hi, extra_bounds)
    extra = [list(b) for b in extra_bounds]
    grids = {
        "train": {"kind": "uniform", "f_lo": lo, "f_hi": hi, "num": spec.train_points,
                  "extra": extra},
        "test": {"kind": "midpoints", "f_lo": lo, "f_hi": hi, "num": spec.test_points},
    }
    if extra:
        grids["test"] = {"kind": "uniform", "f_lo": lo + 0.5 * (hi - lo) / spec.test_points,
                         "f_hi": hi - 0.5 * (hi - lo) / spec.test_points,
                         "num": spec.test_points,
                         "extra": [[0.5 * (a + b)] for a, b in extra_bounds]}
    return AffineSystem(matrices, coefs, [Q], [s], domain, scale=spec.scale, names=names,
                        rhs_names=["Q"], grids=grids)
