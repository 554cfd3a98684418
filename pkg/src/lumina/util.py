"""Small shared helpers: deterministic RNG derivation, bounded thread
pools, atomic file writes, parameter checksums."""

from __future__ import annotations

import hashlib
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np


def derive_rng(*entropy) -> np.random.Generator:
    """Generator keyed by a tuple of ints/strings; stable across runs.

    String components are hashed to 64-bit ints so stage names can key
    independent streams without colliding with loop counters.
    """
    key = []
    for item in entropy:
        if isinstance(item, str):
            digest = hashlib.sha256(item.encode()).digest()
            key.append(int.from_bytes(digest[:8], "little"))
        else:
            key.append(int(item) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(key))


def thread_count() -> int:
    """Worker cap: LUMINA_THREADS if set, else 1 (deterministic default)."""
    raw = os.environ.get("LUMINA_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return 1


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Map preserving order; uses a thread pool only when allowed >1 worker."""
    workers = min(thread_count(), len(items)) if items else 1
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write via temp file + rename so readers never see partial content."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def params_checksum(arrays: Iterable[np.ndarray]) -> str:
    """SHA-256 over raw float bytes, order-sensitive."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()
