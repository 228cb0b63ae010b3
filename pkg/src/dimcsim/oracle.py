"""Reference integer convolution used to check simulated layer outputs.

Deliberately structured unlike the mapper's im2col path: it walks kernel
offsets with shifted tensor slices, so a bookkeeping bug on one side
cannot cancel out on the other.
"""

from __future__ import annotations

import numpy as np

from .tile import PARTIAL_BITS, QuantConfig


def wrap_partials(values: np.ndarray) -> np.ndarray:
    """Elementwise reduction into the signed 24-bit accumulator range."""
    half = 1 << (PARTIAL_BITS - 1)
    return ((values.astype(np.int64) + half) & ((1 << PARTIAL_BITS) - 1)) - half


def conv_partials(inputs, weights, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Exact integer convolution partial sums, wrapped to 24 bits.

    inputs: (h, w, ich); weights: (och, kh, kw, ich). Returns (oh, ow, och).
    """
    inputs = np.asarray(inputs, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.int64)
    h, w, ich = inputs.shape
    och, kh, kw, wich = weights.shape
    if wich != ich:
        raise ValueError(f"channel mismatch: inputs {ich}, weights {wich}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    padded = np.zeros((h + 2 * padding, w + 2 * padding, ich), dtype=np.int64)
    padded[padding:padding + h, padding:padding + w] = inputs
    acc = np.zeros((oh, ow, och), dtype=np.int64)
    for ky in range(kh):
        for kx in range(kw):
            window = padded[ky:ky + oh * stride:stride, kx:kx + ow * stride:stride]
            acc += np.tensordot(window, weights[:, ky, kx, :], axes=([2], [1]))
    return wrap_partials(acc)


def quantize_partials(partials: np.ndarray, quant: QuantConfig) -> np.ndarray:
    """ReLU, arithmetic right shift and saturation, matching dc.f."""
    relu = np.maximum(np.asarray(partials, dtype=np.int64), 0)
    return np.minimum(relu >> quant.right_shift, quant.max_value)
