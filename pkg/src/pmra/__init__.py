"""Projected multi-reference alignment: simulation, moments, orbit recovery and estimators."""

from .estimators import EMConfig, FitResult, em_fit, fit_M, fit_T
from .lm import OptConfig, levenberg_marquardt
from .model import ObservationBatch, generate, project, projected_orbit_sample
from .moments import (
    CosineMatrix,
    CosineMomentSet,
    MomentKind,
    MomentSet,
    cosine_matrix,
    debias,
    empirical_moments,
    population_cosine_moments,
    population_moments,
    to_cosine,
)
from .recovery import RecoveryTrace, reconstruct
from .signal import DihedralElement, Signal, SpectralForm, apply, dft, idft, orbit, orbit_distance

__version__ = "0.1.0"
