"""Shared helpers: RNG substreams, norms, canonical JSON, worker count."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

__all__ = [
    "path_rngs",
    "single_rng",
    "flavor_norm",
    "canonical_json",
    "config_hash",
    "worker_count",
]


def path_rngs(seed: int, n: int, stream: int = 0):
    """Independent generators for ``n`` parallel sample paths.

    Substream ``i`` is derived from ``(seed, stream, i)`` alone, so results do
    not depend on how work is scheduled across paths or workers.
    """
    return [
        np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, stream, i))))
        for i in range(n)
    ]


def single_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, stream))))


def flavor_norm(values: np.ndarray, flavor, axis: int = -1) -> np.ndarray:
    """Norm along ``axis``: Euclidean for flavor ``'hilbert'``/2, else p-norm."""
    if flavor in ("hilbert", "euclidean", 2, 2.0):
        return np.linalg.norm(values, axis=axis)
    p = float(flavor)
    if not p >= 1.0:
        raise ValueError(f"norm flavor must be 'hilbert' or p >= 1, got {flavor!r}")
    return np.sum(np.abs(values) ** p, axis=axis) ** (1.0 / p)


def canonical_json(obj) -> str:
    """Deterministic JSON encoding (sorted keys, no whitespace drift)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def worker_count() -> int:
    """Worker cap from CYLMART_THREADS (>= 1). Affects speed only."""
    raw = os.environ.get("CYLMART_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
