"""Deterministic random-stream derivation and replica-parallel execution.

Every random quantity in the package is drawn from a stream derived from
(master seed, module id, replica index, ...) via numpy's SeedSequence
spawn-key mechanism.  Replicas therefore never share state, and any
partition of the replica range across workers reproduces the serial
result bit for bit.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

# Stable stream identifiers, one per consumer of randomness.  Values are
# part of the reproducibility contract: changing them changes all outputs.
MODULE_PD = 1
MODULE_CASCADE = 2
MODULE_FIELDS = 3
MODULE_MARKS = 4
MODULE_SK = 5
MODULE_INTERP = 6
MODULE_COUPLED = 7

WORKERS_ENV = "CASCADELAB_WORKERS"

# Fixed chunking of the replica range.  The chunk size is a constant, not
# a function of the worker count, so the partition (and hence every
# derived stream) is identical no matter how many workers execute it.
CHUNK_SIZE = 256


def derive_rng(master: int, *key: int) -> np.random.Generator:
    """Return the generator for stream (master, *key).

    Streams with distinct keys are statistically independent; the same
    (master, key) always yields the same stream.
    """
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=key))


def worker_count() -> int:
    """Worker count from the environment; affects speed only, never results."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def _chunks(n: int):
    for start in range(0, n, CHUNK_SIZE):
        yield start, min(start + CHUNK_SIZE, n)


def run_replicas(chunk_fn, args: tuple, master: int, n_replicas: int) -> np.ndarray:
    """Evaluate ``chunk_fn(args, master, start, stop)`` over the replica range.

    ``chunk_fn`` must be a module-level function returning an ndarray whose
    leading dimension is ``stop - start``.  Chunks are concatenated in index
    order, so the result is independent of how chunks are scheduled.
    """
    spans = list(_chunks(n_replicas))
    workers = worker_count()
    if workers > 1 and len(spans) > 1:
        try:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(chunk_fn, args, master, a, b) for a, b in spans]
                parts = [f.result() for f in futures]
            return np.concatenate(parts, axis=0)
        except (OSError, ValueError):
            # Pool creation can fail in restricted environments; the serial
            # path produces identical results.
            pass
    parts = [chunk_fn(args, master, a, b) for a, b in spans]
    return np.concatenate(parts, axis=0)
