"""Strategy policy: embedding table plus a one-hidden-layer tanh MLP.

All arithmetic is float64 numpy. Gradients are written out by hand and
evaluated for many decisions at once; the single-decision functions are
thin wrappers over the batched ones.
"""

import json
from typing import Callable, Dict, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..core.exceptions import CheckpointError, PolicyError
from ..core.models import NUM_OUTCOMES, Strategy
from ..core.types import CheckpointDocument
from ..utils.seeding import Stream, stream_rng

CHECKPOINT_VERSION = "automr-ckpt-v1"
BLOCKS = ("strategy_embeddings", "W1", "b1", "W2", "b2")


class PolicyDims(BaseModel):
    """Shape of the policy."""

    model_config = ConfigDict(frozen=True)

    d_c: int = Field(64, gt=0, description="Content-embedding dimension")
    d_s: int = Field(32, gt=0, description="Strategy-embedding dimension")
    h: int = Field(256, gt=0, description="Hidden width")
    out: int = NUM_OUTCOMES

    @field_validator("out")
    @classmethod
    def validate_out(cls, v: int) -> int:
        if v != NUM_OUTCOMES:
            raise ValueError(f"policy output must have {NUM_OUTCOMES} entries, got {v}")
        return v

    @property
    def input_size(self) -> int:
        return 2 * self.d_c + self.d_s


class PolicyParameters(BaseModel):
    """Trainable state θ. Also used for gradients, which share its shape."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    strategy_embeddings: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def dims(self) -> PolicyDims:
        return PolicyDims(
            d_c=(self.W1.shape[1] - self.strategy_embeddings.shape[1]) // 2,
            d_s=self.strategy_embeddings.shape[1],
            h=self.W1.shape[0],
            out=self.W2.shape[0],
        )

    def blocks(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BLOCKS}

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "PolicyParameters":
        return PolicyParameters(**{name: fn(array) for name, array in self.blocks().items()})

    def combine(
        self,
        other: "PolicyParameters",
        fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    ) -> "PolicyParameters":
        return PolicyParameters(
            **{name: fn(array, getattr(other, name)) for name, array in self.blocks().items()}
        )

    def scaled_add(self, other: "PolicyParameters", scale: float) -> "PolicyParameters":
        """self + scale * other, as a new snapshot."""
        return self.combine(other, lambda a, b: a + scale * b)

    def scale(self, factor: float) -> "PolicyParameters":
        return self.map(lambda a: a * factor)

    def zeros_like(self) -> "PolicyParameters":
        return self.map(np.zeros_like)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.blocks().values())))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.blocks().values()])

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(a))) for a in self.blocks().values())

    def identical_to(self, other: "PolicyParameters") -> bool:
        """Bit-exact equality of every block."""
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.blocks().values(), other.blocks().values())
        )


class StrategyDistribution(BaseModel):
    """Distribution over the eight outcomes."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    logits: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray

    def prob(self, strategy: Strategy) -> float:
        return float(self.probs[strategy.ordinal])


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_params(dims: PolicyDims, seed: int) -> PolicyParameters:
    """Glorot-uniform weights and embeddings, zero biases."""
    rng = stream_rng(seed, Stream.INIT)
    return PolicyParameters(
        strategy_embeddings=_glorot(rng, NUM_OUTCOMES, dims.d_s),
        W1=_glorot(rng, dims.h, dims.input_size),
        b1=np.zeros(dims.h),
        W2=_glorot(rng, NUM_OUTCOMES, dims.h),
        b2=np.zeros(NUM_OUTCOMES),
    )


def zero_params(dims: PolicyDims) -> PolicyParameters:
    """All-zero parameters: the uniform policy."""
    return PolicyParameters(
        strategy_embeddings=np.zeros((NUM_OUTCOMES, dims.d_s)),
        W1=np.zeros((dims.h, dims.input_size)),
        b1=np.zeros(dims.h),
        W2=np.zeros((NUM_OUTCOMES, dims.h)),
        b2=np.zeros(NUM_OUTCOMES),
    )


def conditioning_weights(chosen: Sequence[Strategy]) -> np.ndarray:
    """Weight of each embedding row in the mean over ``chosen`` (zeros if empty)."""
    weights = np.zeros(NUM_OUTCOMES)
    if chosen:
        for strategy in chosen:
            weights[strategy.ordinal] += 1.0
        weights /= len(chosen)
    return weights


def encode_decision_input(
    c_j_emb: np.ndarray,
    chosen: Sequence[Strategy],
    context_embs: Sequence[np.ndarray],
    params: PolicyParameters,
) -> np.ndarray:
    """Concat(e(c_j), Mean(e(s_>j,i)), Mean(e(c_:i-1)))."""
    dims = params.dims
    if not len(context_embs):
        raise PolicyError("decision context must contain at least the source node")
    c_j = np.asarray(c_j_emb, dtype=np.float64)
    context = np.asarray(context_embs, dtype=np.float64)
    if c_j.shape != (dims.d_c,) or context.ndim != 2 or context.shape[1] != dims.d_c:
        raise PolicyError(
            "content embedding dimension mismatch",
            f"expected d_c={dims.d_c}, got {c_j.shape} and {context.shape}",
        )
    middle = conditioning_weights(chosen) @ params.strategy_embeddings
    return np.concatenate([c_j, middle, context.mean(axis=0)])


def _forward_rows(
    params: PolicyParameters, features: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    hidden = np.tanh(features @ params.W1.T + params.b1)
    logits = hidden @ params.W2.T + params.b2
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    if not np.all(np.isfinite(log_probs)):
        raise PolicyError("policy produced non-finite output", "parameters may be corrupted")
    return hidden, logits, log_probs


def forward(params: PolicyParameters, features: np.ndarray) -> StrategyDistribution:
    """logits = W2 tanh(W1 x + b1) + b2, probs = softmax(logits)."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (params.dims.input_size,):
        raise PolicyError(
            "feature length mismatch",
            f"expected {params.dims.input_size}, got {x.shape}",
        )
    _, logits, log_probs = _forward_rows(params, x[None, :])
    return StrategyDistribution(logits=logits[0], probs=np.exp(log_probs[0]), log_probs=log_probs[0])


def batch_logprob_and_grad(
    params: PolicyParameters,
    features: np.ndarray,
    mixing: np.ndarray,
    chosen: np.ndarray,
    weights: np.ndarray,
) -> Tuple[np.ndarray, PolicyParameters]:
    """Log-probs of ``chosen`` per row and Σ_rows weight · ∇θ log p.

    ``mixing[r]`` holds the conditioning weights that built the middle
    block of ``features[r]`` from the embedding table, so the gradient
    reaches the embedding rows through the mean.
    """
    dims = params.dims
    x = np.asarray(features, dtype=np.float64).reshape(-1, dims.input_size)
    rows = np.arange(x.shape[0])
    chosen = np.asarray(chosen, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)

    hidden, _, log_probs = _forward_rows(params, x)
    probs = np.exp(log_probs)

    # d log p_c / d logits = onehot(c) - p
    d_logits = -probs
    d_logits[rows, chosen] += 1.0
    d_logits *= weights[:, None]

    g_W2 = d_logits.T @ hidden
    g_b2 = d_logits.sum(axis=0)
    d_pre = (d_logits @ params.W2) * (1.0 - hidden * hidden)
    g_W1 = d_pre.T @ x
    g_b1 = d_pre.sum(axis=0)
    d_middle = (d_pre @ params.W1)[:, dims.d_c:dims.d_c + dims.d_s]
    g_emb = np.asarray(mixing, dtype=np.float64).reshape(-1, NUM_OUTCOMES).T @ d_middle

    grad = PolicyParameters(strategy_embeddings=g_emb, W1=g_W1, b1=g_b1, W2=g_W2, b2=g_b2)
    return log_probs[rows, chosen], grad


def logprob_and_grad(
    params: PolicyParameters,
    features: np.ndarray,
    chosen: Strategy,
    conditioned_on: Sequence[Strategy] = (),
) -> Tuple[float, PolicyParameters]:
    """log p(chosen | features) and its exact gradient.

    ``conditioned_on`` is the strategy list whose mean formed the middle
    block of ``features``.
    """
    log_probs, grad = batch_logprob_and_grad(
        params,
        np.asarray(features, dtype=np.float64)[None, :],
        conditioning_weights(conditioned_on)[None, :],
        np.array([chosen.ordinal]),
        np.ones(1),
    )
    return float(log_probs[0]), grad


def refresh_conditioning(
    params: PolicyParameters, features: np.ndarray, mixing: np.ndarray
) -> np.ndarray:
    """Copy of ``features`` with the middle block rebuilt from ``params``' embedding table."""
    dims = params.dims
    x = np.array(features, dtype=np.float64).reshape(-1, dims.input_size)
    weights = np.asarray(mixing, dtype=np.float64).reshape(-1, NUM_OUTCOMES)
    x[:, dims.d_c:dims.d_c + dims.d_s] = weights @ params.strategy_embeddings
    return x


def batch_log_probs(params: PolicyParameters, features: np.ndarray, chosen: np.ndarray) -> np.ndarray:
    """Log-probs of ``chosen`` for stacked feature rows, without gradients."""
    x = np.asarray(features, dtype=np.float64).reshape(-1, params.dims.input_size)
    _, _, log_probs = _forward_rows(params, x)
    return log_probs[np.arange(x.shape[0]), np.asarray(chosen, dtype=np.int64)]


def serialize_checkpoint(params: PolicyParameters) -> bytes:
    """JSON checkpoint: version tag, dims header, row-major weight arrays.

    Floats are written with ``repr`` precision, so decoding is bit-exact.
    """
    dims = params.dims
    document: CheckpointDocument = {
        "version": CHECKPOINT_VERSION,
        "dims": {"d_c": dims.d_c, "d_s": dims.d_s, "h": dims.h, "out": dims.out},
        "strategy_embeddings": params.strategy_embeddings.tolist(),
        "W1": params.W1.tolist(),
        "b1": params.b1.tolist(),
        "W2": params.W2.tolist(),
        "b2": params.b2.tolist(),
    }
    return json.dumps(document, allow_nan=False).encode("utf-8")


def _expected_shapes(dims: PolicyDims) -> Dict[str, Tuple[int, ...]]:
    return {
        "strategy_embeddings": (NUM_OUTCOMES, dims.d_s),
        "W1": (dims.h, dims.input_size),
        "b1": (dims.h,),
        "W2": (NUM_OUTCOMES, dims.h),
        "b2": (NUM_OUTCOMES,),
    }


def deserialize_checkpoint(data: bytes) -> PolicyParameters:
    """Decode a checkpoint produced by ``serialize_checkpoint``."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointError("checkpoint is not UTF-8 text", str(e))

    stripped = text.rstrip()
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        if not stripped.endswith("}") or e.pos >= len(stripped):
            raise CheckpointError("unexpected end of checkpoint", f"stream length {len(data)}")
        raise CheckpointError("malformed checkpoint", str(e))

    if not isinstance(document, dict):
        raise CheckpointError("malformed checkpoint", "top level must be an object")

    found = document.get("version")
    if found != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch: expected {CHECKPOINT_VERSION!r}, found {found!r}"
        )

    try:
        header = document["dims"]
        dims = PolicyDims(d_c=header["d_c"], d_s=header["d_s"], h=header["h"], out=header["out"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError("malformed checkpoint: invalid dims header", str(e))

    arrays: Dict[str, np.ndarray] = {}
    for name, shape in _expected_shapes(dims).items():
        if name not in document:
            raise CheckpointError(f"malformed checkpoint: missing field {name}")
        try:
            array = np.array(document[name], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise CheckpointError(f"malformed checkpoint: field {name} is not numeric", str(e))
        if array.shape != shape:
            raise CheckpointError(
                f"malformed checkpoint: field {name} has shape {array.shape}, expected {shape}"
            )
        arrays[name] = array

    params = PolicyParameters(**arrays)
    if not params.is_finite():
        raise CheckpointError("malformed checkpoint: non-finite weights")
    return params


def greedy_choice(distribution: StrategyDistribution) -> int:
    return int(np.argmax(distribution.probs))


def sample_choice(distribution: StrategyDistribution, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; one uniform per decision keeps traces replayable."""
    cdf = np.cumsum(distribution.probs)
    u = rng.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, u, side="right")), NUM_OUTCOMES - 1)

