"""
Utility functions for batching and report formatting.
"""

from typing import Iterator, List, Sequence

import numpy as np


def iter_batches(indices: Sequence[int], batch_size: int) -> Iterator[List[int]]:
    """
    Split an index sequence into consecutive batches.

    Args:
        indices: Sample indices in the order they should be visited
        batch_size: Maximum samples per batch; the last batch may be smaller

    Returns:
        Iterator over lists of indices
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    indices = [int(i) for i in indices]
    for start in range(0, len(indices), batch_size):
        yield indices[start : start + batch_size]


def epoch_permutation(num_samples: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffle order for one epoch, seeded from (seed, epoch) so epochs differ but runs repeat."""
    return np.random.default_rng([seed, epoch]).permutation(num_samples)


def format_duration(seconds: float) -> str:
    """
    Format a duration in human-readable format.

    Args:
        seconds: Time in seconds

    Returns:
        Formatted string (HH:MM:SS, or MM:SS.s under an hour)
    """
    hours = int(seconds // 3600)
    minutes = int((seconds % 3600) // 60)
    rest = seconds % 60

    if hours > 0:
        return f"{hours:02d}:{minutes:02d}:{int(rest):02d}"
    return f"{minutes:02d}:{rest:04.1f}"
