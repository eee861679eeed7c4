"""Counter-based random streams.

Every stochastic quantity in the simulator draws from its own named stream,
keyed by (seed, purpose, slot_index). Streams are mutually independent and
order-independent: code may open them in any order, from any execution
context, and still produce bit-identical values.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _purpose_key(purpose: str) -> int:
    # stable 64-bit digest; never Python's salted hash()
    return int.from_bytes(
        hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest(), "little"
    )


def stream(seed: int, purpose: str, slot_index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, purpose, slot_index).

    The slot index occupies a dedicated counter word, so each stream has the
    full 2**64-block Philox period to itself.
    """
    if slot_index < 0:
        raise ValueError("slot_index must be >= 0")
    key = np.array([seed & _MASK64, _purpose_key(purpose)], dtype=np.uint64)
    counter = np.array([0, slot_index, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def complex_normal(gen: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) draws (unit total variance, 0.5 per component) via Box-Muller.

    Pinned to Box-Muller from uniforms rather than Generator.normal so the
    byte-level output is a contract, not an implementation detail of numpy.
    """
    u1 = gen.random(shape)
    u2 = gen.random(shape)
    # u1 in [0,1): use 1-u1 in (0,1] to keep log finite
    r = np.sqrt(-np.log1p(-u1))
    return r * np.exp(2j * np.pi * u2)


def qpsk(gen: np.random.Generator, shape) -> np.ndarray:
    """Unit-power QPSK symbols (+-1 +-1j)/sqrt(2)."""
    bits = gen.integers(0, 2, size=(2,) + tuple(shape))
    re = 2 * bits[0] - 1
    im = 2 * bits[1] - 1
    return (re + 1j * im) / np.sqrt(2.0)
