"""Deterministic seed derivation for isolated per-component random streams."""

import hashlib


def derive_seed(master_seed: int, salt: str | int) -> int:
    """Stable sub-seed for one component (environment, agent label, ...) of a seeded run."""
    combined = f"{master_seed}-{salt}"
    return int(hashlib.sha256(combined.encode()).hexdigest(), 16) % (2**63 - 1)
