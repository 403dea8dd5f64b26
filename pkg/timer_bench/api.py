"""
Core API helpers and global state management for provider calls.

This module provides the async HTTP client helper, the shared rate
limiter, credential lookup and the process-wide configuration used by
the generation and judge stages.
"""

import asyncio
import logging
import os
import sys
import time
from typing import Any, Dict, Mapping, Optional, Sequence

import httpx

from .errors import ProviderError

logger = logging.getLogger(__name__)


# --- Constants ---
PROVIDER_KEY_ENV = "TIMER_PROVIDER_{name}_KEY"
DEFAULT_TIMEOUT = 60.0
DEFAULT_PARALLELISM = 4
DEFAULT_REQUESTS_PER_MINUTE = 60
RETRYABLE_STATUS = {429, 500, 502, 503, 504}
SENSITIVE_MARKERS = ("token", "secret", "key", "authorization")


# --- Global State ---
_CONFIG: Dict[str, Any] = {
    'provider': 'mock',
    'model': 'mock-1',
    'parallelism': DEFAULT_PARALLELISM,
    'requests_per_minute': DEFAULT_REQUESTS_PER_MINUTE,
    'timeout': DEFAULT_TIMEOUT,
    'max_transport_retries': 3,
    'backoff_base': 1.0,
}


def init_config(**values: Any) -> None:
    """
    Initialize global provider configuration.

    Only known keys are accepted; None values keep the current setting.

    Args:
        **values: provider, model, parallelism, requests_per_minute,
            timeout, max_transport_retries, backoff_base
    """
    unknown = set(values) - set(_CONFIG)
    if unknown:
        raise ValueError(f"Unknown configuration keys: {sorted(unknown)}")
    for key, value in values.items():
        if value is not None:
            _CONFIG[key] = value

    logger.info(f"✓ Provider configured: {_CONFIG['provider']} / {_CONFIG['model']}")
    logger.debug(
        f"parallelism={_CONFIG['parallelism']} "
        f"rpm={_CONFIG['requests_per_minute']} timeout={_CONFIG['timeout']}"
    )


def init_config_from_args(argv: Optional[Sequence[str]] = None) -> None:
    """
    Initialize global configuration from command-line arguments.

    Expected arguments (all optional):
        --provider: mock, openai or gemini
        --model: model identifier
        --parallelism: concurrent provider calls
        --requests-per-minute: shared rate limit
    """
    args = list(sys.argv if argv is None else argv)

    def get_arg(flag: str) -> Optional[str]:
        """Get command-line argument value."""
        if flag in args:
            idx = args.index(flag) + 1
            if idx < len(args):
                return args[idx]
            raise ValueError(f"{flag} provided but no value followed")
        return None

    parallelism = get_arg('--parallelism')
    rpm = get_arg('--requests-per-minute')
    init_config(
        provider=get_arg('--provider'),
        model=get_arg('--model'),
        parallelism=int(parallelism) if parallelism else None,
        requests_per_minute=int(rpm) if rpm else None,
    )


def get_provider_name() -> str:
    """Get the configured provider name."""
    return _CONFIG['provider']


def get_model() -> str:
    """Get the configured model identifier."""
    return _CONFIG['model']


def get_parallelism() -> int:
    """Get the bounded-concurrency setting for provider calls."""
    return int(_CONFIG['parallelism'])


def get_requests_per_minute() -> int:
    """Get the shared request rate limit."""
    return int(_CONFIG['requests_per_minute'])


def get_timeout() -> float:
    """Get the HTTP timeout in seconds."""
    return float(_CONFIG['timeout'])


def get_provider_key(name: str) -> str:
    """Read the API key for a provider from TIMER_PROVIDER_<NAME>_KEY."""
    env_name = PROVIDER_KEY_ENV.format(name=name.upper().replace("-", "_"))
    key = os.environ.get(env_name)
    if not key:
        raise ProviderError(f"{env_name} is not set")
    return key


def redact(values: Mapping[str, Any]) -> Dict[str, Any]:
    """Copy a mapping with credential-looking entries replaced."""
    return {
        k: "[REDACTED]" if any(s in k.lower() for s in SENSITIVE_MARKERS) else v
        for k, v in values.items()
    }


class RateLimiter:
    """Interval-based limiter shared by all concurrent provider tasks."""

    def __init__(self, requests_per_minute: Optional[int] = None):
        rpm = requests_per_minute if requests_per_minute is not None else get_requests_per_minute()
        self._min_interval = 60.0 / rpm if rpm > 0 else 0.0
        self._last_request_time = 0.0
        self._lock = asyncio.Lock()

    async def wait(self) -> None:
        """Sleep until the next request slot; the lock is held across the sleep so waiters go one at a time."""
        if self._min_interval == 0.0:
            return
        async with self._lock:
            now = time.monotonic()
            elapsed = now - self._last_request_time
            if elapsed < self._min_interval:
                await asyncio.sleep(self._min_interval - elapsed)
            self._last_request_time = time.monotonic()


# --- HTTP Helpers ---

async def _make_provider_post(
    url: str,
    payload: Dict[str, Any],
    headers: Optional[Dict[str, str]] = None,
    params: Optional[Dict[str, str]] = None,
    limiter: Optional[RateLimiter] = None,
    max_retries: Optional[int] = None,
    backoff_base: Optional[float] = None,
) -> Dict[str, Any]:
    """
    Make an async POST request to a completion API with bounded retries.

    Transport errors, 429 and 5xx responses are retried with exponential
    backoff (backoff_base * 2**attempt seconds). Other HTTP errors fail
    immediately.

    Args:
        url: The API endpoint URL
        payload: JSON body
        headers: Extra request headers (credentials are redacted in logs)
        params: Query parameters (credentials are redacted in logs)
        limiter: Shared rate limiter, awaited before every attempt
        max_retries: Retries after the first attempt
        backoff_base: Base delay in seconds

    Returns:
        Dict: JSON response from the API

    Raises:
        ProviderError: After the last failed attempt
    """
    retries = _CONFIG['max_transport_retries'] if max_retries is None else max_retries
    base = _CONFIG['backoff_base'] if backoff_base is None else backoff_base
    last_error: Optional[ProviderError] = None

    for attempt in range(retries + 1):
        if limiter is not None:
            await limiter.wait()
        try:
            async with httpx.AsyncClient(timeout=get_timeout()) as client:
                response = await client.post(url, json=payload, headers=headers, params=params)
            if response.status_code in RETRYABLE_STATUS:
                last_error = ProviderError(
                    f"HTTP {response.status_code} from {url}", status_code=response.status_code
                )
            else:
                response.raise_for_status()
                return response.json()
        except httpx.HTTPStatusError as e:
            logger.error(
                f"❌ Provider POST error: {url} | Params: {redact(params or {})} "
                f"| Headers: {redact(headers or {})} | Status: {e.response.status_code}"
            )
            raise ProviderError(
                f"HTTP {e.response.status_code} from {url}", status_code=e.response.status_code
            ) from e
        except (httpx.RequestError, ValueError) as e:
            last_error = ProviderError(f"Request error: {url} | {e}")

        if attempt < retries:
            delay = base * (2 ** attempt)
            logger.warning(f"Retrying {url} in {delay:.1f}s ({last_error})")
            await asyncio.sleep(delay)

    logger.error(f"❌ Provider request failed after {retries + 1} attempts: {last_error}")
    assert last_error is not None
    raise last_error
