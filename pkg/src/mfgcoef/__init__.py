"""Coefficient recovery for a two-population mean field games system.

The package generates synthetic observation data by solving the density
equation forward in time, perturbs it with multiplicative noise, and
recovers the spatially varying interaction coefficient by minimizing a
Carleman-weighted least-squares functional with projected gradient descent.
"""

from .config import ExperimentConfig, load_config
from .grid import Field, SpaceTimeGrid
from .phantoms import letter_phantom, make_k, score
from .pipeline import run_generation, run_inversion

__all__ = [
    "ExperimentConfig",
    "Field",
    "SpaceTimeGrid",
    "letter_phantom",
    "load_config",
    "make_k",
    "run_generation",
    "run_inversion",
    "score",
]

__version__ = "0.1.0"
