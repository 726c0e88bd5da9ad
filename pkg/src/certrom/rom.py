"""Galerkin reduced-order models of an :class:`~certrom.system.AffineSystem`."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidSpec, SingularMatrix, SingularReducedMatrix
from .linalg import factorize
from .system import AffineSystem, Coefficient, ParameterPoint

ROM_FORMAT = "certrom-rom"
ROM_VERSION = 1


def theta_matrix(coefficients, points) -> np.ndarray:
    """``(N, Q)`` array of coefficient values at each point."""
    return np.array([[c(mu) for c in coefficients] for mu in points], dtype=complex).reshape(
        len(points), len(coefficients))


@dataclass
class ReducedModel:
    """Projected affine terms ``V^H A_q V`` and ``V^H Q_q`` plus the basis ``V``.

    The model needs nothing from the parent system at solve time, so it can be
    shipped as a bundle and swept without the full-order matrices.
    """

    basis: np.ndarray
    matrices: np.ndarray  # (Q, r, r)
    coefficients: list[Coefficient]
    rhs: np.ndarray  # (Qb, r, p)
    rhs_coefficients: list[Coefficient]
    scale: float
    info: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict)  # estimator data shipped with the bundle

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def r(self) -> int:
        return self.basis.shape[1]

    @property
    def p(self) -> int:
        return self.rhs.shape[2]

    def assemble(self, mu: ParameterPoint) -> np.ndarray:
        thetas = np.array([c(mu) for c in self.coefficients])
        return np.tensordot(thetas, self.matrices, axes=1)

    def assemble_rhs(self, mu: ParameterPoint) -> np.ndarray:
        thetas = np.array([c(mu) for c in self.rhs_coefficients]) / self.scale
        return np.tensordot(thetas, self.rhs, axes=1)

    def solve(self, mu: ParameterPoint) -> np.ndarray:
        """Reduced coordinates ``z`` (``r x p``)."""
        try:
            lu = factorize(self.assemble(mu))
        except SingularMatrix as exc:
            raise SingularReducedMatrix(f"reduced matrix singular at f={mu.frequency!r}: {exc}") from None
        return lu.solve(self.assemble_rhs(mu))

    def solve_many(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Batched reduced solves over ``points``.

        Returns ``Z`` of shape ``(N, r, p)`` and a boolean mask of the points
        whose reduced matrix turned out singular (their ``Z`` rows are NaN).
        """
        points = list(points)
        N = len(points)
        Z = np.full((N, self.r, self.p), np.nan, dtype=complex)
        ok = np.ones(N, dtype=bool)
        if N == 0:
            return Z, ~ok
        A = np.einsum("nq,qij->nij", theta_matrix(self.coefficients, points), self.matrices)
        B = np.einsum("nq,qij->nij", theta_matrix(self.rhs_coefficients, points) / self.scale,
                      self.rhs)
        try:
            Z[:] = np.linalg.solve(A, B)
            ok = np.all(np.isfinite(Z), axis=(1, 2))
        except np.linalg.LinAlgError:
            for k, mu in enumerate(points):
                try:
                    Z[k] = self.solve(mu)
                except SingularReducedMatrix:
                    ok[k] = False
        Z[~ok] = np.nan
        return Z, ~ok

    def reconstruct(self, z) -> np.ndarray:
        return self.basis @ z


def project(system: AffineSystem, V, info: dict | None = None) -> ReducedModel:
    """Galerkin projection; all reduced affine terms are computed once here."""
    V = np.asarray(V)
    if V.ndim != 2 or V.shape[0] != system.n:
        raise DimensionMismatch(f"basis has shape {V.shape}, system has n={system.n}")
    if V.shape[1] > system.n:
        raise DimensionMismatch("basis has more columns than rows")
    Vh = V.conj().T
    matrices = np.array([Vh @ (Aq @ V) for Aq in system.matrices])
    rhs = np.array([Vh @ Q for Q in system.rhs])
    return ReducedModel(V, matrices, list(system.coefficients), rhs,
                        list(system.rhs_coefficients), float(system.scale), dict(info or {}))


def rom_solve(rm: ReducedModel, mu: ParameterPoint) -> tuple[np.ndarray, np.ndarray]:
    z = rm.solve(mu)
    return z, rm.reconstruct(z)


def residual(system: AffineSystem, mu: ParameterPoint, x_hat) -> np.ndarray:
    """``B(mu) - A(mu) x_hat``, per port column."""
    x_hat = np.asarray(x_hat)
    B = system.assemble_rhs(mu)
    if x_hat.ndim == 1:
        B = B[:, 0] if B.shape[1] == 1 else B
    if x_hat.shape[0] != system.n or B.shape != x_hat.shape:
        raise DimensionMismatch(f"x_hat has shape {x_hat.shape}, expected {B.shape}")
    return B - system.apply(mu, x_hat)


def save_rom(rm: ReducedModel, directory) -> Path:
    """Bundle: ``rom.json`` manifest plus ``.npy`` arrays."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "basis.npy", rm.basis)
    np.save(directory / "matrices.npy", rm.matrices)
    np.save(directory / "rhs.npy", rm.rhs)
    for name, arr in rm.aux.items():
        np.save(directory / f"aux_{name}.npy", arr)
    manifest = {
        "format": ROM_FORMAT,
        "version": ROM_VERSION,
        "n": rm.n,
        "r": rm.r,
        "p": rm.p,
        "scale": rm.scale,
        "coefficients": [str(c) for c in rm.coefficients],
        "rhs_coefficients": [str(c) for c in rm.rhs_coefficients],
        "info": rm.info,
        "aux": sorted(rm.aux),
    }
    path = directory / "rom.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_rom(directory) -> ReducedModel:
    directory = Path(directory)
    if not directory.is_dir():
        directory = directory.parent
    manifest = json.loads((directory / "rom.json").read_text())
    if manifest.get("format") != ROM_FORMAT:
        raise InvalidSpec(f"{directory} is not a certrom ROM bundle")
    return ReducedModel(
        basis=np.load(directory / "basis.npy"),
        matrices=np.load(directory / "matrices.npy"),
        coefficients=[Coefficient.parse(c) for c in manifest["coefficients"]],
        rhs=np.load(directory / "rhs.npy"),
        rhs_coefficients=[Coefficient.parse(c) for c in manifest["rhs_coefficients"]],
        scale=float(manifest["scale"]),
        info=manifest.get("info", {}),
        aux={name: np.load(directory / f"aux_{name}.npy") for name in manifest.get("aux", [])},
    )
