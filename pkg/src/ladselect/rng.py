"""Counter-based random streams.

Every random quantity in ladselect comes from Philox4x64-10 (numpy's
``np.random.Philox``).  A stream is identified by a 64-bit user seed plus a
short integer path; the path is hashed with ``np.random.SeedSequence`` into
the 128-bit Philox key.  Philox output is a pure function of (key, counter),
so a block of draws can be regenerated from any offset, in any order, by any
worker, with identical results.

Two access patterns are offered:

* :func:`substream` returns an ordinary ``np.random.Generator`` for a path,
  used where the number of variates per unit is data dependent (simulation,
  EM restarts).
* :func:`uniform_block` returns open-interval uniforms for draws
  ``[start, stop)`` of a fixed-width layout.  Draw ``t`` always reads the
  Philox counter blocks ``[t * blocks, (t + 1) * blocks)``, which is what makes
  posterior sampling independent of batching and thread count.
"""

from __future__ import annotations

import numpy as np

from .errors import LadValidationError

MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0**-53

# Stream domains; values are part of the reproducibility contract.
DOMAIN_POSTERIOR = 1
DOMAIN_DIAGONAL = 2
DOMAIN_WISHART = 3
DOMAIN_GAUSSIAN = 4
DOMAIN_SIMULATE = 10
DOMAIN_EM = 11
DOMAIN_REPLICATE = 20


def check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0 or seed > MASK64:
        raise LadValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def derive_key(seed: int, *path: int) -> np.ndarray:
    """128-bit Philox key for ``(seed, *path)``."""
    entropy = [check_seed(seed)] + [int(p) for p in path]
    return np.random.SeedSequence(entropy).generate_state(2, np.uint64)


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for the stream ``(seed, *path)``."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *path)))


def child_seed(seed: int, *path: int) -> int:
    """A 64-bit seed for a nested computation, derived from ``(seed, *path)``."""
    return int(np.random.SeedSequence([check_seed(seed)] + [int(p) for p in path]).generate_state(1, np.uint64)[0])


def uniform_block(key: np.ndarray, start: int, stop: int, width: int) -> np.ndarray:
    """Uniforms on (0, 1) for draws ``start..stop-1``, ``width`` per draw.

    Each draw owns ``ceil(width / 4)`` Philox blocks; unused words of the last
    block are discarded so that the layout depends only on ``width``.
    """
    if stop < start:
        raise LadValidationError("stop must be >= start")
    blocks = -(-width // 4)
    words = 4 * blocks
    count = stop - start
    if count == 0:
        return np.empty((0, width))
    gen = np.random.Philox(key=key, counter=start * blocks)
    raw = gen.random_raw(count * words).reshape(count, words)[:, :width]
    # 53 high bits, shifted by half an ulp so that 0 and 1 are unreachable
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
