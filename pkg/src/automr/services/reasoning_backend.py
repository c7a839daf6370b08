"""Reasoning backends: the interface the sampler talks to, plus the
deterministic mock and the scripted reward environment."""

import hashlib
import re
from abc import ABC, abstractmethod
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from ..core.exceptions import BackendError
from ..core.models import BackendCapabilities, DatasetRecord, GenerationResult, Strategy, TaskKind
from .strategy_catalog import StrategyCatalog, guidance_prompts

MARKER_PREFIX = "strategy:"
WRONG_ANSWER = "no-answer"
_WORD = re.compile(r"[a-z0-9]+")


def digest64(*parts: object) -> int:
    """Stable 64-bit digest of the parts' text."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def digest_embedding(text: str, d_c: int, seed: int = 0) -> np.ndarray:
    """Unit vector drawn from a generator keyed by the text digest."""
    vector = np.random.default_rng(digest64(seed, text)).standard_normal(d_c)
    return vector / np.linalg.norm(vector)


def count_tokens(text: str) -> int:
    """One token per whitespace-delimited word, at least one."""
    return max(1, len(text.split()))


def truncate_words(text: str, max_tokens: int) -> str:
    return " ".join(text.split()[:max_tokens])


class ReasoningBackend(ABC):
    """Text generation plus content embeddings for the sampler."""

    capabilities: BackendCapabilities

    @property
    def d_c(self) -> int:
        return self.capabilities.d_c

    @abstractmethod
    async def generate_step(
        self, context: Sequence[str], guidance: str, max_tokens: int
    ) -> GenerationResult:
        """Produce the next reasoning step under ``guidance``."""

    @abstractmethod
    async def generate_answer(
        self, context: Sequence[str], answer_prompt: str, max_tokens: int
    ) -> GenerationResult:
        """Produce the final answer from the full ordered context."""

    @abstractmethod
    async def embed_only(self, text: str) -> np.ndarray:
        """Embed text that was not generated (the query)."""

    async def aclose(self) -> None:
        """Release connections, if any."""

    @staticmethod
    def _check_cap(max_tokens: int) -> None:
        if max_tokens < 1:
            raise BackendError(f"max_tokens must be at least 1, got {max_tokens}")


class MockBackend(ReasoningBackend):
    """Deterministic backend: outputs are digests of the inputs and seed."""

    def __init__(self, d_c: int = 64, seed: int = 0, step_words: int = 24):
        self.capabilities = BackendCapabilities(d_c=d_c, deterministic=True)
        self.seed = seed
        self.step_words = step_words

    def _generate(self, kind: str, context: Sequence[str], prompt: str, max_tokens: int) -> GenerationResult:
        self._check_cap(max_tokens)
        key = digest64(self.seed, kind, *context, prompt)
        n_words = 1 + key % min(max_tokens, self.step_words)
        rng = np.random.default_rng(key)
        text = " ".join(f"m{w:x}" for w in rng.integers(0, 1 << 20, size=n_words))
        return GenerationResult(
            text=text,
            token_count=count_tokens(text),
            embedding=digest_embedding(text, self.d_c, self.seed),
        )

    async def generate_step(
        self, context: Sequence[str], guidance: str, max_tokens: int
    ) -> GenerationResult:
        return self._generate("step", context, guidance, max_tokens)

    async def generate_answer(
        self, context: Sequence[str], answer_prompt: str, max_tokens: int
    ) -> GenerationResult:
        if not context:
            raise BackendError("answer context must contain the query")
        return self._generate("answer", context, answer_prompt, max_tokens)

    async def embed_only(self, text: str) -> np.ndarray:
        return digest_embedding(text, self.d_c, self.seed)


class ScriptedEnvSpec(BaseModel):
    """A reward environment whose optimal policy is known.

    The answer is correct iff the first generated step was guided by
    ``target_strategy``. Queries follow ``query_template`` and carry the
    code that forms their gold answer.
    """

    model_config = ConfigDict(frozen=True)

    target_strategy: Strategy = Strategy.RECALL
    query_template: str = (
        "Scripted task {index}: pick the reasoning strategy that unlocks code {code}."
    )
    task: TaskKind = TaskKind.GENERIC

    @field_validator("target_strategy")
    @classmethod
    def validate_target(cls, v: Strategy) -> Strategy:
        if v is Strategy.ZERO:
            raise ValueError("target strategy cannot be Zero")
        return v

    def code_for(self, index: int) -> str:
        return f"k{digest64('scripted-code', index) % 10**6:06d}"

    def make_query(self, index: int) -> str:
        return self.query_template.format(index=index, code=self.code_for(index))

    def gold_answer(self, query: str) -> str:
        match = re.search(r"unlocks code (\w+)", query)
        if match:
            return match.group(1)
        return f"k{digest64('scripted-code', query) % 10**6:06d}"

    def make_dataset(self, n: int) -> List[DatasetRecord]:
        return [
            DatasetRecord(query=q, answer=self.gold_answer(q), task=self.task)
            for q in (self.make_query(i) for i in range(n))
        ]


def first_marker(context: Sequence[str]) -> Optional[str]:
    """Strategy name of the first marker in the generated steps, if any."""
    for content in context[1:]:
        for word in content.split():
            if word.startswith(MARKER_PREFIX):
                return word[len(MARKER_PREFIX):]
    return None


class ScriptedBackend(ReasoningBackend):
    """Backend realizing a ``ScriptedEnvSpec``.

    Steps record the strategies that guided them as ``strategy:<Name>``
    markers; embeddings are hashed bag-of-words vectors.
    """

    def __init__(
        self,
        spec: ScriptedEnvSpec,
        catalog: Optional[StrategyCatalog] = None,
        d_c: int = 64,
        step_words: int = 12,
    ):
        self.spec = spec
        self.catalog = catalog or StrategyCatalog()
        self.capabilities = BackendCapabilities(d_c=d_c, deterministic=True)
        self.step_words = step_words

    def embed(self, text: str) -> np.ndarray:
        vector = np.zeros(self.d_c)
        for word in _WORD.findall(text.lower()):
            key = digest64("bow", word)
            vector[key % self.d_c] += 1.0 if (key >> 32) & 1 else -1.0
        norm = np.linalg.norm(vector)
        if norm == 0.0:
            return digest_embedding(text, self.d_c)
        return vector / norm

    def _result(self, text: str) -> GenerationResult:
        return GenerationResult(text=text, token_count=count_tokens(text), embedding=self.embed(text))

    async def generate_step(
        self, context: Sequence[str], guidance: str, max_tokens: int
    ) -> GenerationResult:
        self._check_cap(max_tokens)
        guiding = [
            strategy
            for strategy in (self.catalog.strategy_of(line) for line in guidance_prompts(guidance))
            if strategy is not None
        ]
        markers = [f"{MARKER_PREFIX}{s.value}" for s in guiding]
        filler = [f"step{len(context)}w{k}" for k in range(max(0, self.step_words - len(markers)))]
        return self._result(truncate_words(" ".join(markers + filler), max_tokens))

    async def generate_answer(
        self, context: Sequence[str], answer_prompt: str, max_tokens: int
    ) -> GenerationResult:
        self._check_cap(max_tokens)
        if not context:
            raise BackendError("answer context must contain the query")
        if first_marker(context) == self.spec.target_strategy.value:
            return self._result(self.spec.gold_answer(context[0]))
        return self._result(WRONG_ANSWER)

    async def embed_only(self, text: str) -> np.ndarray:
        return self.embed(text)
