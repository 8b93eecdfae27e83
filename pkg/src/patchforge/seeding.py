"""Deterministic seed derivation: child streams are keyed, never scheduled."""

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(*parts: int) -> int:
    """A 63-bit seed that is a pure function of the integer ``parts``.

    Negative parts are folded into the unsigned 64-bit range first.
    """
    entropy = [int(p) & _MASK64 for p in parts]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return ((int(state[0]) << 32) | int(state[1])) >> 1


def rng_for(*parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(p) & _MASK64 for p in parts]))
