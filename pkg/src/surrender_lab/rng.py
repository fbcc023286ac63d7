"""Counter-based random streams.

Every draw is a pure function of ``(master seed, stream path, entity id, slot)``,
so results never depend on evaluation order, chunking or the number of
workers.  The mixing function is the SplitMix64 finaliser applied to a keyed
Weyl sequence.

Streams are derived by name::

    root = CounterRNG(42)
    ages = root.child("portfolio").child("age")
    u = ages.uniform(policy_ids, slot=0)

Named child keys are derived with a SHA-256 digest of the name, never with
Python's salted ``hash``.
"""
from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SLOT_MULT = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(seed: int, *path: str | int) -> int:
    """Derive a 64-bit key from a master seed and a path of names/ids."""
    key = int(seed) & _MASK64
    for part in path:
        part_key = _name_key(part) if isinstance(part, str) else int(part) & _MASK64
        with np.errstate(over="ignore"):
            z = np.array([key ^ part_key], dtype=np.uint64) + _GOLDEN
            key = int(_mix64(_mix64(z))[0])
    return key


class CounterRNG:
    """Keyed counter-based generator of uniforms, normals and gammas."""

    def __init__(self, seed: int, _key: int | None = None):
        self.seed = int(seed)
        self.key = derive_seed(seed) if _key is None else _key

    def child(self, name: str | int) -> "CounterRNG":
        return CounterRNG(self.seed, _key=derive_seed(self.key, name))

    def _bits(self, ids, slot) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.uint64)
        slot = np.asarray(slot, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + (ids + np.uint64(1)) * _GOLDEN
            z = _mix64(z)
            z = _mix64(z ^ ((slot + np.uint64(1)) * _SLOT_MULT))
        return z

    def uniform(self, ids, slot=0) -> np.ndarray:
        """Uniforms in the open interval (0, 1), one per (id, slot) pair."""
        bits = self._bits(ids, slot) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * (2.0 ** -53)

    def normal(self, ids, slot=0) -> np.ndarray:
        """Standard normals by Box-Muller on slots ``2*slot`` and ``2*slot + 1``."""
        slot = np.asarray(slot, dtype=np.uint64)
        u1 = self.uniform(ids, slot * np.uint64(2))
        u2 = self.uniform(ids, slot * np.uint64(2) + np.uint64(1))
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def gamma(self, ids, shape: float, scale: float, max_attempts: int = 256) -> np.ndarray:
        """Gamma(shape, scale) draws via Marsaglia-Tsang squeeze rejection.

        Attempt ``k`` for an id consumes normal slot ``k`` and uniform slot
        ``k`` of two sub-streams, so each id's draw is independent of the rest
        of the batch.  Shapes below one use the ``U**(1/shape)`` boost.
        """
        if shape <= 0 or scale <= 0:
            raise ValueError("gamma shape and scale must be positive")
        ids = np.atleast_1d(np.asarray(ids, dtype=np.uint64))
        boost = shape < 1.0
        a = shape + 1.0 if boost else shape
        d = a - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        normals = self.child("gamma-normal")
        uniforms = self.child("gamma-uniform")

        out = np.full(ids.shape, np.nan)
        pending = np.arange(ids.size)
        for attempt in range(max_attempts):
            if pending.size == 0:
                break
            sub = ids[pending]
            z = normals.normal(sub, attempt)
            u = uniforms.uniform(sub, attempt)
            v = (1.0 + c * z) ** 3
            ok = v > 0
            with np.errstate(invalid="ignore", divide="ignore"):
                accept = ok & (
                    (u < 1.0 - 0.0331 * z**4)
                    | (np.log(u) < 0.5 * z * z + d * (1.0 - v + np.log(np.where(ok, v, 1.0))))
                )
            out[pending[accept]] = d * v[accept]
            pending = pending[~accept]
        if pending.size:
            raise RuntimeError("gamma rejection sampler did not terminate")
        if boost:
            out *= self.child("gamma-boost").uniform(ids, 0) ** (1.0 / shape)
        return out * scale

    def choice(self, ids, probs, slot=0) -> np.ndarray:
        """Categorical draw returning indices into ``probs``."""
        cdf = np.cumsum(np.asarray(probs, dtype=float))
        cdf /= cdf[-1]
        return np.searchsorted(cdf, self.uniform(ids, slot), side="right")

    def generator(self, *path: str | int) -> np.random.Generator:
        """A numpy Philox generator keyed by this stream plus ``path``.

        Used for sequential, non-vectorised consumers (bootstrap draws,
        feature subsets during tree growth).
        """
        key = derive_seed(self.key, *path)
        return np.random.Generator(np.random.Philox(key=key))
