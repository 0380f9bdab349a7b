"""Hash primitives shared across the chain model.

hash256 is Bitcoin's HASH256 (SHA-256 applied twice) and is the only
digest used for identifiers: txids, block ids, snapshot ids, tags.
hash160 deliberately deviates from Bitcoin: this model has no RIPEMD-160,
so the 20-byte commitment is a single SHA-256 truncated to 20 bytes.
"""

import hashlib


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hash256(data: bytes) -> bytes:
    """Double SHA-256, 32 bytes."""
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


def hash160(data: bytes) -> bytes:
    """20-byte script commitment: single SHA-256 truncated to 20 bytes."""
    return hashlib.sha256(data).digest()[:20]
