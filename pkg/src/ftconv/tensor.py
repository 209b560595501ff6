"""Dense NCHW convolution: direct and im2col/GEMM forward paths plus backward.

Tensors are plain 4D numpy arrays. Roles follow the usual layout:

    D  feature map   (N, Ch, H, H)
    W  kernels       (M, Ch // G, R, R)
    O  output        (N, M, E, E)      E = (H + 2*pad - R + U) / U
    B  bias          (M,)  (a (M, 1, 1, 1) array is accepted too)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError, UnsupportedError

Impl = Literal["direct", "mm"]

FLOAT_TYPES = (np.float32, np.float64)


@dataclass(frozen=True)
class ConvParams:
    stride: int = 1
    groups: int = 1
    pad: int = 0
    bias_enabled: bool = False

    def __post_init__(self):
        if self.stride < 1:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        if self.groups < 1:
            raise ConfigError(f"groups must be positive, got {self.groups}")
        if self.pad < 0:
            raise ConfigError(f"pad must be nonnegative, got {self.pad}")

    def out_size(self, H: int, R: int) -> int:
        span = H + 2 * self.pad - R + self.stride
        if span <= 0 or span % self.stride:
            raise ConfigError(
                f"output size (H + 2*pad - R + U)/U = ({H} + {2 * self.pad} - {R} + "
                f"{self.stride})/{self.stride} is not a positive integer"
            )
        return span // self.stride

    def replace(self, **kw) -> ConvParams:
        fields = dict(stride=self.stride, groups=self.groups, pad=self.pad,
                      bias_enabled=self.bias_enabled)
        fields.update(kw)
        return ConvParams(**fields)


def as_tensor4(a, dtype=None, name: str = "tensor") -> np.ndarray:
    """Validate and return a 4D floating array (finite values only)."""
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be 4D, got shape {arr.shape}")
    if arr.dtype.type not in FLOAT_TYPES:
        arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite values")
    return arr


def conv_shapes(D: np.ndarray, W: np.ndarray, params: ConvParams) -> tuple[int, int, int, int, int]:
    """Check D/W compatibility and return (N, M, Ch, R, E)."""
    if D.ndim != 4 or W.ndim != 4:
        raise ShapeError(f"D and W must be 4D, got {D.shape} and {W.shape}")
    N, Ch, H, H2 = D.shape
    M, Cg, R, R2 = W.shape
    if H != H2 or R != R2:
        raise ShapeError(f"only square fmaps/kernels are supported: D {D.shape}, W {W.shape}")
    G = params.groups
    if Ch % G or M % G:
        raise ShapeError(f"groups={G} must divide Ch={Ch} and M={M}")
    if Cg != Ch // G:
        raise ShapeError(f"kernel channels {Cg} != Ch/G = {Ch // G}")
    E = params.out_size(H, R)
    return N, M, Ch, R, E


def _bias_vector(B, M: int) -> np.ndarray:
    b = np.asarray(B).reshape(-1)
    if b.shape[0] != M:
        raise ShapeError(f"bias has {b.shape[0]} entries, expected M={M}")
    return b


def _padded(D: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return D
    return np.pad(D, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _window(Dp: np.ndarray, i: int, j: int, U: int, E: int) -> np.ndarray:
    stop_i = i + U * (E - 1) + 1
    stop_j = j + U * (E - 1) + 1
    return Dp[:, :, i:stop_i:U, j:stop_j:U]


def _direct_dense(Dp: np.ndarray, W: np.ndarray, U: int, E: int) -> np.ndarray:
    N = Dp.shape[0]
    M, _, R, _ = W.shape
    out = np.zeros((M, N, E, E), dtype=np.result_type(Dp, W))
    for i in range(R):
        for j in range(R):
            out += np.tensordot(W[:, :, i, j], _window(Dp, i, j, U, E), axes=([1], [1]))
    return out.transpose(1, 0, 2, 3)


def im2col(Dp: np.ndarray, R: int, U: int, E: int) -> np.ndarray:
    """Patch matrix of shape (Ch*R*R, N*E*E); rows ordered (k, i, j), columns (n, x, y)."""
    N, Ch = Dp.shape[:2]
    win = sliding_window_view(Dp, (R, R), axis=(2, 3))[:, :, : U * (E - 1) + 1 : U, : U * (E - 1) + 1 : U]
    # win: (N, Ch, E, E, R, R)
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(Ch * R * R, N * E * E)


def _mm_dense(Dp: np.ndarray, W: np.ndarray, U: int, E: int) -> np.ndarray:
    N = Dp.shape[0]
    M, Ch, R, _ = W.shape
    cols = im2col(Dp, R, U, E)
    out = W.reshape(M, Ch * R * R) @ cols
    return out.reshape(M, N, E, E).transpose(1, 0, 2, 3)


_KERNELS = {"direct": _direct_dense, "mm": _mm_dense}


def conv_forward(D, W, B=None, params: ConvParams = ConvParams(), impl: Impl = "direct") -> np.ndarray:
    """Convolve fmaps D with kernels W; add bias when ``params.bias_enabled``.

    Grouped convolution wires kernel group g (kernels g*M/G .. (g+1)*M/G - 1)
    to channel group g of every fmap block. Products accumulate in float64 and
    the result is rounded once to the input element type.
    """
    D = np.asarray(D)
    W = np.asarray(W)
    N, M, Ch, R, E = conv_shapes(D, W, params)
    out_dtype = np.result_type(D, W)
    if out_dtype.type not in FLOAT_TYPES:
        out_dtype = np.dtype(np.float32)
    D = D.astype(np.float64, copy=False)
    W = W.astype(np.float64, copy=False)
    try:
        kernel = _KERNELS[impl]
    except KeyError:
        raise ConfigError(f"unknown convolution implementation {impl!r}") from None
    Dp = _padded(D, params.pad)
    G = params.groups
    if G == 1:
        O = kernel(Dp, W, params.stride, E)
    else:
        cg, mg = Ch // G, M // G
        O = np.concatenate(
            [kernel(Dp[:, g * cg:(g + 1) * cg], W[g * mg:(g + 1) * mg], params.stride, E)
             for g in range(G)],
            axis=1,
        )
    if params.bias_enabled:
        if B is None:
            raise ShapeError("bias_enabled but no bias given")
        O = O + _bias_vector(B, M).astype(np.float64)[None, :, None, None]
    return np.ascontiguousarray(O, dtype=out_dtype)


def conv_block(Dn, Wm, params: ConvParams = ConvParams()) -> np.ndarray:
    """Single block convolution Dn (Ch,H,H) with Wm (Ch,R,R) -> (E,E), no bias."""
    Dn = np.asarray(Dn)
    Wm = np.asarray(Wm)
    if Dn.ndim != 3 or Wm.ndim != 3:
        raise ShapeError(f"blocks must be 3D, got {Dn.shape} and {Wm.shape}")
    if Dn.shape[0] != Wm.shape[0]:
        raise ShapeError(f"channel mismatch: {Dn.shape[0]} vs {Wm.shape[0]}")
    p = params.replace(groups=1, bias_enabled=False)
    return conv_forward(Dn[None], Wm[None], params=p)[0, 0]


def conv_backward(D, W, dO, params: ConvParams = ConvParams()) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (dW, dD) of the un-biased convolution output w.r.t. W and D."""
    D = np.asarray(D)
    W = np.asarray(W)
    dO = np.asarray(dO)
    if params.groups != 1:
        raise UnsupportedError("grouped convolution backward is not supported")
    N, M, Ch, R, E = conv_shapes(D, W, params)
    if dO.shape != (N, M, E, E):
        raise ShapeError(f"dO must have shape {(N, M, E, E)}, got {dO.shape}")
    U, pad = params.stride, params.pad
    Dp = _padded(D, pad)
    dtype = np.result_type(D, W, dO)
    dW = np.zeros(W.shape, dtype=dtype)
    dDp = np.zeros(Dp.shape, dtype=dtype)
    for i in range(R):
        for j in range(R):
            win = _window(Dp, i, j, U, E)
            dW[:, :, i, j] = np.tensordot(dO, win, axes=([0, 2, 3], [0, 2, 3]))
            contrib = np.tensordot(dO, W[:, :, i, j], axes=([1], [0]))  # (N, E, E, Ch)
            _window(dDp, i, j, U, E)[...] += contrib.transpose(0, 3, 1, 2)
    H = D.shape[2]
    dD = dDp[:, :, pad:pad + H, pad:pad + H]
    return dW, np.ascontiguousarray(dD)
