"""Certified greedy reduced-basis models for affinely parametric complex linear systems."""

from .errors import (
    CertromError,
    DegenerateGrid,
    DimensionMismatch,
    DimensionTooLarge,
    EmptyBasis,
    InvalidSpec,
    NotConverged,
    SingularMatrix,
    SingularReducedMatrix,
)
from .system import (
    AffineSystem,
    Coefficient,
    ParameterDomain,
    ParameterGrid,
    ParameterPoint,
    load_system,
    save_system,
)
from .rom import ReducedModel, load_rom, project, residual, rom_solve, save_rom
from .benchmarks import BenchmarkSpec, generate, reference_resonances
from .greedy import GreedyConfig, GreedyReport, greedy_build

__version__ = "0.1.0"
