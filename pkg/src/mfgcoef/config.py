"""Experiment configuration: defaults, INI files, and builder helpers.

A run is described by a flat dataclass mirroring a small INI file with
one section per concern.  Every field has a working default (the
benchmark setup), so an empty config is runnable; a file only lists what
it changes.  `validate` constructs every downstream object once, so a
bad combination fails before any compute starts rather than mid-run.

The default output root comes from the MFGCOEF_OUTPUT_ROOT environment
variable when set; a config file or a command-line flag overrides it.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass
from typing import Tuple

from .carleman import CarlemanParams
from .grid import SpaceTimeGrid
from .inverse import SolverConfig
from .kernels import DownstreamKernel, Kernel, LineGaussianKernel
from .phantoms import LETTERS

ENV_OUTPUT_ROOT = "MFGCOEF_OUTPUT_ROOT"

KERNEL_VARIANTS = ("line_gaussian", "downstream")


@dataclass(frozen=True)
class ExperimentConfig:
    # geometry
    a: float = 1.0
    b: float = 2.0
    half_width: float = 0.5
    horizon: float = 1.0
    # grids, (n1, n2, nt)
    fine: Tuple[int, int, int] = (81, 81, 321)
    coarse: Tuple[int, int, int] = (21, 21, 11)
    # weight
    lam: float = 3.0
    alpha: float = 0.2
    # objective
    beta: float = 1e-3
    # kernel
    kernel_variant: str = "line_gaussian"
    sigma: float = 0.2
    # phantom
    letter: str = "A"
    contrast: float = 2.0
    # benchmark fields
    density_offset: float = 2.0
    # noise
    delta: float = 0.0
    seed: int = 0
    # solver
    step0: float = 0.1
    grad_tol: float = 1e-2
    max_iter: int = 20000
    shrink: float = 0.5
    precondition: bool = True
    outflow_closure: str = "neumann_scaled"
    # output
    output_root: str = ""

    def __post_init__(self) -> None:
        if not self.output_root:
            object.__setattr__(
                self, "output_root", os.environ.get(ENV_OUTPUT_ROOT, "runs")
            )

    # builders; each delegates validation to the object it constructs

    def fine_grid(self) -> SpaceTimeGrid:
        n1, n2, nt = self.fine
        return SpaceTimeGrid(
            a=self.a, b=self.b, half_width=self.half_width, horizon=self.horizon,
            n1=n1, n2=n2, nt=nt,
        )

    def coarse_grid(self) -> SpaceTimeGrid:
        n1, n2, nt = self.coarse
        return SpaceTimeGrid(
            a=self.a, b=self.b, half_width=self.half_width, horizon=self.horizon,
            n1=n1, n2=n2, nt=nt,
        )

    def carleman_params(self) -> CarlemanParams:
        return CarlemanParams(
            lam=self.lam, alpha=self.alpha, b=self.b, horizon=self.horizon
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            step0=self.step0,
            grad_tol=self.grad_tol,
            max_iter=self.max_iter,
            shrink=self.shrink,
            precondition=self.precondition,
            outflow_closure=self.outflow_closure,
        )

    def kernel(self) -> Kernel:
        if self.kernel_variant == "line_gaussian":
            return LineGaussianKernel(sigma=self.sigma)
        if self.kernel_variant == "downstream":
            return DownstreamKernel()
        raise ValueError(
            f"unknown kernel variant {self.kernel_variant!r}, "
            f"expected one of {KERNEL_VARIANTS}"
        )

    def validate(self) -> None:
        """Construct everything cheap once; raises on any bad combination."""
        self.fine_grid()
        self.coarse_grid()
        self.carleman_params()
        self.solver_config()
        self.kernel()
        if self.letter not in LETTERS:
            raise ValueError(f"unknown letter {self.letter!r}, expected one of {LETTERS}")
        if self.contrast <= 0:
            raise ValueError(f"contrast must be positive, got {self.contrast}")
        if self.delta < 0:
            raise ValueError(f"noise level must be nonnegative, got {self.delta}")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["fine"] = list(self.fine)
        out["coarse"] = list(self.coarse)
        return out


_SCHEMA = {
    "geometry": {"a": float, "b": float, "half_width": float, "horizon": float},
    "grid": {"fine": "triple", "coarse": "triple"},
    "weight": {"lam": float, "alpha": float},
    "objective": {"beta": float},
    "kernel": {"variant": str, "sigma": float},
    "phantom": {"letter": str, "contrast": float},
    "benchmark": {"density_offset": float},
    "noise": {"delta": float, "seed": int},
    "solver": {
        "step0": float,
        "grad_tol": float,
        "max_iter": int,
        "shrink": float,
        "precondition": bool,
        "outflow_closure": str,
    },
    "output": {"root": str},
}

_FIELD_NAMES = {
    ("kernel", "variant"): "kernel_variant",
    ("output", "root"): "output_root",
}


def _parse_value(kind, raw: str):
    if kind == "triple":
        parts = raw.replace(",", " ").split()
        if len(parts) != 3:
            raise ValueError(f"expected three node counts, got {raw!r}")
        return tuple(int(p) for p in parts)
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    return kind(raw)


def load_config(path) -> ExperimentConfig:
    """Defaults overlaid with an INI file; unknown keys are errors."""
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    changes = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}] in {path}")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}] of {path}")
            name = _FIELD_NAMES.get((section, key), key)
            try:
                changes[name] = _parse_value(_SCHEMA[section][key], raw)
            except ValueError as exc:
                raise ValueError(f"bad value for [{section}] {key} in {path}: {exc}")
    return ExperimentConfig(**changes)
