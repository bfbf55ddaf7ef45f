"""Shared helpers: seed fan-out, thread caps and dtype resolution."""

from __future__ import annotations

import hashlib
import os
import random

import numpy as np
import torch

from .config import ENV_THREADS


def derive_seed(seed: int, stream: str) -> int:
    """Map ``(seed, stream name)`` to an independent 63-bit seed.

    Streams are named (``"init"``, ``"dropout"``, ``"span_oracle"``) so that adding
    a consumer never shifts the random numbers seen by another.
    """

    digest = hashlib.sha256(f"{seed}:{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def seed_stream(seed: int, stream: str) -> None:
    """Seed the global torch / numpy / random generators from a named stream."""

    value = derive_seed(seed, stream)
    torch.manual_seed(value)
    np.random.seed(value % (2**32))
    random.seed(value)


def numpy_rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, stream))


def thread_limit(default: int | None = None) -> int:
    """Worker cap from ``PALM_THREADS`` (falls back to the CPU count)."""

    raw = os.getenv(ENV_THREADS)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, default or os.cpu_count() or 1)


def apply_thread_limit() -> int:
    limit = thread_limit()
    torch.set_num_threads(limit)
    return limit


def resolve_dtype(precision: str) -> torch.dtype:
    if precision == "float64":
        return torch.float64
    if precision == "float32":
        return torch.float32
    raise ValueError(f"unknown precision {precision!r}")


__all__ = [
    "derive_seed",
    "seed_stream",
    "numpy_rng",
    "thread_limit",
    "apply_thread_limit",
    "resolve_dtype",
]
