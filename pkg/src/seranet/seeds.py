"""Deterministic seed derivation for fan-out of one master seed."""

from __future__ import annotations

import hashlib

_MASK63 = (1 << 63) - 1


def derive_seed(*parts) -> int:
    """Collapse a tuple of ints/strings into a stable 63-bit seed.

    Used to give every slice-level operation (label map, phase, mask,
    noise) its own independent stream from a single master seed, without
    any shared global RNG state.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & _MASK63
