"""Gemini model client for placeholder synthesis.

Uses Google's Gemini API (google-genai SDK) to fill repair templates when the
heuristic resolver leaves placeholders open. The endpoint and key come from
MODEL_ENDPOINT_URL / MODEL_API_KEY.
"""

import logging
import time
from typing import Callable, Optional, TypeVar

import httpx
from google import genai
from google.genai import types
from google.genai.errors import APIError

from app.config import settings
from app.models.schemas import Prompt
from app.services.synth import TransportError


logger = logging.getLogger(__name__)

T = TypeVar("T")

# Retry once on transient failures (rate limit, 5xx, transient network).
GEMINI_MAX_RETRIES = 1
GEMINI_RETRY_BACKOFF_SECONDS = 1.5


def _is_transient_api_error(e: APIError) -> bool:
    """Returns True for retryable Gemini API errors (429 rate limit, 5xx)."""
    code = getattr(e, "code", None) or getattr(e, "status_code", None)
    if isinstance(code, int):
        return code == 429 or 500 <= code < 600
    msg = str(e).lower()
    return any(
        s in msg
        for s in ("rate limit", "429", "500", "502", "503", "504", "internal error")
    )


def _call_gemini_with_retry(call: Callable[[], T], *, label: str) -> T:
    """Run a Gemini call with one retry on transient failures."""
    for attempt in range(GEMINI_MAX_RETRIES + 1):
        try:
            return call()
        except APIError as e:
            if _is_transient_api_error(e) and attempt < GEMINI_MAX_RETRIES:
                logger.warning(
                    f"{label} transient APIError on attempt {attempt + 1}: "
                    f"{e!r}; retrying"
                )
                time.sleep(GEMINI_RETRY_BACKOFF_SECONDS)
                continue
            raise
        except httpx.HTTPError as e:
            # timeouts land here too
            if attempt < GEMINI_MAX_RETRIES:
                logger.warning(
                    f"{label} HTTP error on attempt {attempt + 1}: "
                    f"{e!r}; retrying"
                )
                time.sleep(GEMINI_RETRY_BACKOFF_SECONDS)
                continue
            raise
    raise AssertionError("unreachable")


class GeminiModelClient:
    """Live ModelClient. The SDK client is created on first use."""

    source = "external"

    def __init__(
        self,
        api_key: Optional[str] = None,
        endpoint_url: Optional[str] = None,
        model: Optional[str] = None,
        timeout_seconds: Optional[float] = None,
    ):
        self.api_key = api_key if api_key is not None else settings.MODEL_API_KEY
        self.endpoint_url = endpoint_url if endpoint_url is not None else settings.MODEL_ENDPOINT_URL
        self.model = model or settings.MODEL_NAME
        self.timeout_seconds = timeout_seconds or settings.MODEL_TIMEOUT_SECONDS
        self._genai_client: Optional[genai.Client] = None

    def _get_genai_client(self) -> genai.Client:
        if self._genai_client is None:
            if not self.api_key:
                raise RuntimeError(
                    "MODEL_API_KEY is not configured; the external resolver is unavailable."
                )
            self._genai_client = genai.Client(
                api_key=self.api_key,
                http_options=types.HttpOptions(
                    base_url=self.endpoint_url,
                    timeout=int(self.timeout_seconds * 1000),
                ),
            )
        return self._genai_client

    def complete(self, prompt: Prompt) -> str:
        label = f"Gemini[{prompt.site or 'prompt'}]"
        try:
            client = self._get_genai_client()
            response = _call_gemini_with_retry(
                lambda: client.models.generate_content(
                    model=self.model,
                    contents=prompt.render(),
                    config=types.GenerateContentConfig(temperature=0.0),
                ),
                label=label,
            )
        except (APIError, httpx.HTTPError, RuntimeError) as e:
            logger.error(f"{label} failed: {e}")
            raise TransportError(f"model call failed: {e}") from e

        text = response.text
        if not text:
            raise TransportError("model returned an empty reply")
        logger.info(f"{label} replied with {len(text)} chars")
        return text
