"""Benchmark definitions and the generation/inversion plumbing.

The forward benchmark prescribes the value function and the density
data analytically, places a letter phantom in the coefficient, solves
the density on the fine grid and restricts everything to the inversion
grid.  Inversion consumes only the restricted observations: clean runs
differentiate them with direct stencils, noisy runs inject the
multiplicative noise first and read derivatives off splines.  Both
halves run purely in memory; persistence is the command layer's job.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .forward import (
    ForwardSpec,
    GeneratedData,
    ObservationData,
    generate,
    stencil_bundle,
)
from .grid import Field
from .inverse import ReconstructionResult, invert
from .noise import NoiseSpec, inject, smooth_observations
from .objective import ObjectiveContext
from .phantoms import Metrics, Phantom, letter_phantom, make_k, score


def benchmark_value_fn(x1, x2, t):
    return 0.1 * np.cos(np.pi * x1) * np.sin(np.pi * x2) * (t * t + 1.0)


def benchmark_density_boundary_fn(offset: float):
    def fn(x1, x2, t):
        return (t + 1.0) * (x1 * x2 + offset)

    return fn


def benchmark_density_init_fn(offset: float):
    def fn(x1, x2):
        return x1 * x2 + offset

    return fn


def forward_spec(cfg: ExperimentConfig) -> ForwardSpec:
    fine = cfg.fine_grid()
    k_fine = make_k(letter_phantom(cfg.letter, fine, cfg.contrast))
    return ForwardSpec(
        grid=fine,
        value_fn=benchmark_value_fn,
        density_init_fn=benchmark_density_init_fn(cfg.density_offset),
        density_boundary_fn=benchmark_density_boundary_fn(cfg.density_offset),
        coefficient=k_fine.values,
        kernel=cfg.kernel(),
    )


def run_generation(cfg: ExperimentConfig) -> GeneratedData:
    """Forward solve on the fine grid, observations on the inversion grid."""
    return generate(forward_spec(cfg), cfg.coarse_grid())


def observation_bundle(obs: ObservationData, delta: float, seed: int):
    """The derivative bundle an inversion sees, with the data it came from."""
    if delta > 0:
        noisy = inject(obs, NoiseSpec(level=delta, seed=seed))
        return noisy, smooth_observations(noisy)
    return obs, stencil_bundle(obs)


def build_context(
    cfg: ExperimentConfig,
    obs: ObservationData,
    cost: np.ndarray,
    cost_rate: np.ndarray,
) -> ObjectiveContext:
    _, bundle = observation_bundle(obs, cfg.delta, cfg.seed)
    return ObjectiveContext(
        grid=obs.grid,
        kernel=cfg.kernel(),
        params=cfg.carleman_params(),
        beta=cfg.beta,
        bundle=bundle,
        cost=cost,
        cost_rate=cost_rate,
    )


@dataclass
class InversionOutcome:
    """Everything an inversion run reports."""

    result: ReconstructionResult
    phantom: Phantom
    k_true: Field
    metrics: Metrics
    denominator_min: float


def run_inversion(
    cfg: ExperimentConfig,
    obs: ObservationData,
    cost: np.ndarray,
    cost_rate: np.ndarray,
) -> InversionOutcome:
    """Noise (if configured), context build, descent, scoring."""
    ctx = build_context(cfg, obs, cost, cost_rate)
    result = invert(ctx, cfg.solver_config())
    phantom = letter_phantom(cfg.letter, obs.grid, cfg.contrast)
    k_true = make_k(phantom)
    metrics = score(result.coefficient, k_true, phantom.mask)
    return InversionOutcome(
        result=result,
        phantom=phantom,
        k_true=k_true,
        metrics=metrics,
        denominator_min=float(np.abs(ctx.denominator).min()),
    )
