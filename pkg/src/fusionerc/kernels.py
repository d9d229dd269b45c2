"""Hot convolution kernels with a compiled backend and a numpy fallback.

The compiled ``_kernels`` extension is used when it imports; otherwise the
pure-numpy implementations below are selected. Set ``FUSIONERC_PURE=1`` to
force the fallback.
"""

from __future__ import annotations

import os

import numpy as np


def im2col_numpy(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride].transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def col2im_numpy(cols: np.ndarray, shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j].transpose(1, 0, 2, 3)
    return out[:, :, pad:pad + h, pad:pad + w] if pad else out


try:
    if os.environ.get("FUSIONERC_PURE"):
        raise ImportError("pure-python kernels forced")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "numpy"


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    if _compiled is not None:
        return _compiled.im2col(np.ascontiguousarray(x, dtype=np.float64), kh, kw, stride, pad)
    return im2col_numpy(x, kh, kw, stride, pad)


def col2im(cols: np.ndarray, shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    if _compiled is not None:
        return _compiled.col2im(np.ascontiguousarray(cols, dtype=np.float64), tuple(shape), kh, kw, stride, pad)
    return col2im_numpy(cols, shape, kh, kw, stride, pad)
