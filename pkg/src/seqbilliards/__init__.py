"""Sequential dispersing billiards: collision maps, density cones, transfer
operators, open systems, lazy-gate scattering and random Lorentz gases."""

__version__ = "0.1.0"

from .billiard import (BilliardTable, FamilyParams, PhasePoint, Scatterer, build_table,  # noqa: E402
                       expansion_factor, hyperbolicity_check, invariance_check)
from .cone import ConeParams, CurveSampler, bound_diameter, cone_membership, hilbert_metric  # noqa: E402
from .curves import StableCurve  # noqa: E402
from .errors import *  # noqa: E402,F401,F403
from .transfer import DensityField, MapSequence, memory_loss_experiment, transfer_eval  # noqa: E402

__all__ = [
    "BilliardTable", "FamilyParams", "PhasePoint", "Scatterer", "build_table", "expansion_factor",
    "hyperbolicity_check", "invariance_check", "ConeParams", "CurveSampler", "bound_diameter",
    "cone_membership", "hilbert_metric", "StableCurve", "DensityField", "MapSequence",
    "memory_loss_experiment", "transfer_eval",
]
