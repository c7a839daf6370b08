"""Finite-difference check of the policy's analytic gradients."""

from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..core.models import NUM_OUTCOMES, Strategy
from ..utils.seeding import Stream, stream_rng
from .policy_net import (
    BLOCKS,
    PolicyDims,
    PolicyParameters,
    encode_decision_input,
    forward,
    init_params,
    logprob_and_grad,
)

DEFAULT_TOLERANCE = 1e-4


class GradCheckReport(BaseModel):
    """Largest relative errors between analytic and numeric gradients."""

    model_config = ConfigDict(frozen=True)

    max_relative_error: float
    block_errors: Dict[str, float]
    coordinates_checked: int
    step: float
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)


def _random_params(dims: PolicyDims, seed: int, rng: np.random.Generator) -> PolicyParameters:
    """Initialized weights with nonzero biases so every block matters."""
    params = init_params(dims, seed)
    return PolicyParameters(**{
        **params.blocks(),
        "b1": rng.normal(0.0, 0.1, size=dims.h),
        "b2": rng.normal(0.0, 0.1, size=NUM_OUTCOMES),
    })


def _with_entry(params: PolicyParameters, block: str, flat_index: int, value: float) -> PolicyParameters:
    array = getattr(params, block).copy()
    array.flat[flat_index] = value
    return PolicyParameters(**{**params.blocks(), block: array})


def _pick_coordinates(
    params: PolicyParameters, n_coords: int, rng: np.random.Generator
) -> List[Tuple[str, int]]:
    """At least one coordinate per block, the rest uniform over all entries."""
    sizes = [(name, getattr(params, name).size) for name in BLOCKS]
    picks = [(name, int(rng.integers(size))) for name, size in sizes]
    offsets = np.cumsum([0] + [size for _, size in sizes])
    for flat in rng.integers(offsets[-1], size=max(0, n_coords - len(picks))):
        block = int(np.searchsorted(offsets, flat, side="right")) - 1
        picks.append((sizes[block][0], int(flat - offsets[block])))
    return picks


def gradcheck(
    dims: PolicyDims = PolicyDims(),
    seed: int = 0,
    n_coords: int = 200,
    step: float = 1e-5,
    context_nodes: int = 3,
) -> GradCheckReport:
    """Compare ``logprob_and_grad`` with central differences.

    The objective rebuilds the decision features from the perturbed
    parameters, so embedding-table coordinates are checked through the
    conditioning mean.
    """
    rng = stream_rng(seed, Stream.INIT, 1)
    params = _random_params(dims, seed, rng)

    c_j = rng.normal(size=dims.d_c)
    context = list(rng.normal(size=(context_nodes, dims.d_c)))
    conditioned = [Strategy.from_index(int(k)) for k in rng.integers(NUM_OUTCOMES, size=3)]
    chosen = Strategy.from_index(int(rng.integers(NUM_OUTCOMES)))

    def objective(p: PolicyParameters) -> float:
        features = encode_decision_input(c_j, conditioned, context, p)
        return float(forward(p, features).log_probs[chosen.ordinal])

    features = encode_decision_input(c_j, conditioned, context, params)
    _, grad = logprob_and_grad(params, features, chosen, conditioned_on=conditioned)

    block_errors: Dict[str, float] = {}
    coordinates = _pick_coordinates(params, n_coords, rng)
    for block, index in coordinates:
        original = float(getattr(params, block).flat[index])
        plus = objective(_with_entry(params, block, index, original + step))
        minus = objective(_with_entry(params, block, index, original - step))
        numeric = (plus - minus) / (2.0 * step)
        analytic = float(getattr(grad, block).flat[index])
        error = relative_error(analytic, numeric)
        block_errors[block] = max(block_errors.get(block, 0.0), error)

    return GradCheckReport(
        max_relative_error=max(block_errors.values()),
        block_errors=block_errors,
        coordinates_checked=len(coordinates),
        step=step,
    )
