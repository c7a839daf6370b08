"""Backend for OpenAI-compatible chat-completions services."""

import asyncio
from typing import Any, Dict, List, Optional, Sequence

import httpx
import numpy as np

from ..core.exceptions import BackendError
from ..core.logging import get_logger
from ..core.models import BackendCapabilities, GenerationResult
from .reasoning_backend import ReasoningBackend, digest_embedding

RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 0.5
RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class HttpBackend(ReasoningBackend):
    """Chat-completions generation with an optional embeddings endpoint.

    Hidden states are not available from hosted services, so e(c) comes
    from ``/v1/embeddings`` when an embedding model is configured and from
    the digest scheme otherwise.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str,
        d_c: int = 64,
        embedding_model: Optional[str] = None,
        temperature: float = 0.7,
        system_prompt: str = "Solve the problem step by step.",
        max_in_flight: int = 8,
        timeout: float = 60.0,
        transport: Optional[httpx.AsyncBaseTransport] = None,
        retry_base_delay: float = RETRY_BASE_DELAY,
    ):
        self.capabilities = BackendCapabilities(d_c=d_c, deterministic=False)
        self.model = model
        self.embedding_model = embedding_model
        self.temperature = temperature
        self.system_prompt = system_prompt
        self.retry_base_delay = retry_base_delay
        self.logger = get_logger(__name__)
        self._semaphore = asyncio.Semaphore(max_in_flight)
        self._client = httpx.AsyncClient(
            base_url=base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=timeout,
            transport=transport,
        )

    async def aclose(self) -> None:
        await self._client.aclose()

    async def _post(self, path: str, body: Dict[str, Any]) -> Dict[str, Any]:
        """POST with retries on transport errors and retryable statuses."""
        last_error = ""
        for attempt in range(1, RETRY_ATTEMPTS + 1):
            try:
                async with self._semaphore:
                    response = await self._client.post(path, json=body)
                if response.status_code == 200:
                    return response.json()
                last_error = f"HTTP {response.status_code}: {response.text[:200]}"
                if response.status_code not in RETRYABLE_STATUS:
                    break
            except httpx.TransportError as e:
                last_error = f"{type(e).__name__}: {e}"
            except ValueError as e:
                raise BackendError(f"Invalid JSON from {path}", str(e))

            if attempt < RETRY_ATTEMPTS:
                delay = self.retry_base_delay * (2 ** (attempt - 1))
                self.logger.warning("http_retry", path=path, attempt=attempt, delay=delay, error=last_error)
                await asyncio.sleep(delay)

        raise BackendError(
            f"Request to {path} failed after {RETRY_ATTEMPTS} attempts",
            last_error,
        )

    def _messages(self, user_content: str) -> List[Dict[str, str]]:
        return [
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": user_content},
        ]

    async def _complete(self, user_content: str, max_tokens: int) -> GenerationResult:
        self._check_cap(max_tokens)
        payload = await self._post(
            "/v1/chat/completions",
            {
                "model": self.model,
                "messages": self._messages(user_content),
                "max_tokens": max_tokens,
                "temperature": self.temperature,
            },
        )
        try:
            text = payload["choices"][0]["message"]["content"] or ""
            token_count = int(payload["usage"]["completion_tokens"])
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise BackendError("Malformed chat-completions response", repr(e))

        if token_count <= 0:
            raise BackendError("Service reported zero completion tokens")
        if token_count > max_tokens:
            self.logger.warning("token_count_clamped", reported=token_count, cap=max_tokens)
            token_count = max_tokens

        return GenerationResult(
            text=text,
            token_count=token_count,
            embedding=await self.embed_only(text),
        )

    async def generate_step(
        self, context: Sequence[str], guidance: str, max_tokens: int
    ) -> GenerationResult:
        # Guidance lists predecessors in index order, so a step fed by the
        # query already opens with it.
        if guidance.startswith("Step 0: "):
            return await self._complete(guidance, max_tokens)
        return await self._complete(f"Question: {context[0]}\n\n{guidance}", max_tokens)

    async def generate_answer(
        self, context: Sequence[str], answer_prompt: str, max_tokens: int
    ) -> GenerationResult:
        if not context:
            raise BackendError("answer context must contain the query")
        return await self._complete("\n\n".join([*context, answer_prompt]), max_tokens)

    async def embed_only(self, text: str) -> np.ndarray:
        if not self.embedding_model:
            return digest_embedding(text, self.d_c)

        payload = await self._post("/v1/embeddings", {"model": self.embedding_model, "input": text})
        try:
            vector = np.asarray(payload["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise BackendError("Malformed embeddings response", repr(e))
        if vector.shape != (self.d_c,):
            raise BackendError(
                "Embedding dimension mismatch",
                f"configured d_c={self.d_c}, service returned {vector.shape}",
            )
        return vector
