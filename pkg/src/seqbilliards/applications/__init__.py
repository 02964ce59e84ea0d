"""End-to-end models: chaotic scattering in a box and the random Lorentz gas."""

from .lorentz import LorentzConfig, WalkRecord, lorentz_walk, memory_loss_lorentz
from .scattering import BoxedTable, LazyOrbits, build_boxed, lazy_orbit

__all__ = [
    "BoxedTable", "LazyOrbits", "build_boxed", "lazy_orbit",
    "LorentzConfig", "WalkRecord", "lorentz_walk", "memory_loss_lorentz",
]
