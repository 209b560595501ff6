from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checksums import kernel_checksums
from .errors import ShapeError
from .tensor import ConvParams, conv_forward


@dataclass
class ConvLayer:
    """A convolution layer with its golden kernel copy and precomputed Cw1/Cw2.

    ``W`` is the live kernel tensor and may be corrupted in place; ``golden``
    is never handed out for mutation and is used to reload ``W``.
    """

    name: str
    W: np.ndarray
    B: np.ndarray | None
    params: ConvParams
    golden: np.ndarray = field(init=False, repr=False)
    golden_B: np.ndarray | None = field(init=False, repr=False)
    cw1: np.ndarray = field(init=False, repr=False)
    cw2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.W = np.array(self.W, copy=True)
        if self.W.ndim != 4:
            raise ShapeError(f"layer {self.name}: W must be 4D, got {self.W.shape}")
        if not np.all(np.isfinite(self.W)):
            raise ShapeError(f"layer {self.name}: non-finite kernel values")
        if self.params.bias_enabled:
            if self.B is None:
                raise ShapeError(f"layer {self.name}: bias enabled but missing")
            self.B = np.array(self.B, dtype=self.W.dtype).reshape(-1)
            if self.B.shape[0] != self.W.shape[0]:
                raise ShapeError(f"layer {self.name}: bias has {self.B.shape[0]} entries, M={self.W.shape[0]}")
            if not np.all(np.isfinite(self.B)):
                raise ShapeError(f"layer {self.name}: non-finite bias values")
        else:
            self.B = None
        self.golden = self.W.copy()
        self.golden.flags.writeable = False
        self.golden_B = None if self.B is None else self.B.copy()
        self.cw1, self.cw2 = kernel_checksums(self.golden, self.params.groups)

    @property
    def M(self) -> int:
        return self.W.shape[0]

    @property
    def R(self) -> int:
        return self.W.shape[2]

    @property
    def bias(self) -> np.ndarray | None:
        return self.B if self.params.bias_enabled else None

    def kernel_intact(self) -> bool:
        return bool(np.array_equal(self.W, self.golden))

    def reload(self) -> None:
        """Restore kernels (and bias) from the golden copy."""
        self.W[...] = self.golden
        if self.golden_B is not None:
            self.B[...] = self.golden_B

    def forward(self, D: np.ndarray, impl: str = "direct") -> np.ndarray:
        return conv_forward(D, self.W, self.B, self.params, impl)
