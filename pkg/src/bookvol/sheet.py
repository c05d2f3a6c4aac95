"""Brownian-sheet noise over price buckets.

The sheet W(t, s) is represented on an orthonormal indicator basis: factor j
owns price bucket j of width delta_p and carries an independent Brownian
motion in t.  Integrating a loading row b against the sheet reduces to
sum_j b_j * sqrt(delta_p) * dW_j, and Cov(W(t,s1), W(t,s2)) = t * min(s1,s2).

Draws come from a counter-based Philox generator keyed by (seed, stream
chunk) with the step index in the counter, so any (stream, step) block can be
regenerated independently and runs are bit-identical for a fixed seed and
step schedule.  Streams are grouped in chunks of 256 per generator; a single
stream's draw is defined as its row within the chunk block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_CHUNK = 256


@dataclass(frozen=True)
class SheetConfig:
    factor_count: int
    delta_p: float
    seed: int = 0

    @property
    def span(self) -> float:
        """Total price span covered by the factor buckets."""
        return self.factor_count * self.delta_p


def _chunk_block(cfg: SheetConfig, step: int, chunk: int) -> np.ndarray:
    """Standard-normal block of shape (_CHUNK, factor_count) for one chunk."""
    bits = np.random.Philox(
        key=np.array([cfg.seed, chunk], dtype=np.uint64),
        counter=np.array([0, 0, 0, step], dtype=np.uint64),
    )
    return np.random.Generator(bits).standard_normal((_CHUNK, cfg.factor_count))


def increments_block(cfg: SheetConfig, dt: float, step: int, n_streams: int) -> np.ndarray:
    """Factor increments dW ~ N(0, dt) for streams 0..n_streams-1 at one step."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    n_chunks = -(-n_streams // _CHUNK)
    blocks = [_chunk_block(cfg, step, c) for c in range(n_chunks)]
    out = np.concatenate(blocks, axis=0)[:n_streams]
    return out * np.sqrt(dt)


def increments(cfg: SheetConfig, dt: float, step: int, stream: int = 0) -> np.ndarray:
    """One stream's factor increments; row ``stream`` of the block draw."""
    block = _chunk_block(cfg, step, stream // _CHUNK)
    return block[stream % _CHUNK] * np.sqrt(dt)


def integrate(loadings: np.ndarray, inc: np.ndarray, delta_p: float) -> np.ndarray:
    """Loading-weighted sheet integral: sum_j b[..., j] sqrt(delta_p) inc[..., j].

    With a normalized row (sum_j b_j^2 delta_p = 1) the result has variance dt.
    """
    loadings = np.asarray(loadings, dtype=float)
    inc = np.asarray(inc, dtype=float)
    return np.sqrt(delta_p) * (loadings * inc).sum(axis=-1)


def basis_integral(cfg: SheetConfig, s: float) -> np.ndarray:
    """int_0^s g_j(a) da for each indicator-basis factor j."""
    if not 0 <= s <= cfg.span + 1e-12:
        raise ValueError(f"s={s} outside the sheet span [0, {cfg.span}]")
    left = np.arange(cfg.factor_count) * cfg.delta_p
    overlap = np.clip(s - left, 0.0, cfg.delta_p)
    return overlap / np.sqrt(cfg.delta_p)


def sheet_value(cfg: SheetConfig, beta: np.ndarray, s: float) -> np.ndarray:
    """W(t, s) from factor levels beta_j(t) (cumulated increments up to t)."""
    beta = np.asarray(beta, dtype=float)
    return beta @ basis_integral(cfg, s)
