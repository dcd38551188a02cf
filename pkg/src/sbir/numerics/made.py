from __future__ import annotations

from typing import Sequence

import numpy as np


def made_degrees(d_in: int, hidden_sizes: Sequence[int]) -> list[np.ndarray]:
    """Sequential degree assignment: inputs get 1..d_in, hidden units cycle."""
    if d_in < 1:
        raise ValueError("d_in must be >= 1")
    degrees = [np.arange(1, d_in + 1)]
    for n in hidden_sizes:
        if n < 1:
            raise ValueError("hidden sizes must be >= 1")
        degrees.append(np.arange(n) % max(1, d_in - 1) + min(1, d_in - 1))
    return degrees


def made_masks(d_in: int, hidden_sizes: Sequence[int], d_out_multiplier: int = 1) -> list[np.ndarray]:
    """Binary masks making a feedforward net autoregressive.

    Masks are shaped ``(fan_in, fan_out)``. The output layer has
    ``d_in * d_out_multiplier`` units laid out in blocks of ``d_in``: output
    ``k * d_in + i`` belongs to dimension ``i`` and depends only on inputs
    ``j < i``. With ``d_in == 1`` no input reaches the output at all.
    """
    if d_out_multiplier < 1:
        raise ValueError("d_out_multiplier must be >= 1")
    degrees = made_degrees(d_in, hidden_sizes)
    masks = [
        (d0[:, None] <= d1[None, :]).astype(np.float64)
        for d0, d1 in zip(degrees[:-1], degrees[1:])
    ]
    out_deg = np.tile(np.arange(1, d_in + 1), d_out_multiplier)
    masks.append((degrees[-1][:, None] < out_deg[None, :]).astype(np.float64))
    return masks
