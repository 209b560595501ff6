"""Input/output checksums, output summations, bias adjustment, kernel verification.

Block notation: D_n is fmap n, W_m kernel m, O_nm the (E, E) output tile.
Index weights n and m are 0-based.

    Cd1 = sum_n D_n          Cd2 = sum_n n*D_n
    Cw1 = sum_m W_m          Cw2 = sum_m m*W_m        (grouped: per-group sums, concatenated)

    Co1 = Cd1 (x) W      -> (M, E, E)     So1[m] = sum_n O_nm
    Co2 = D (x) Cw1      -> (N, E, E)     So2[n] = sum_m O_nm
    Co3 = Cd2 (x) W      -> (M, E, E)     So3[m] = sum_n n*O_nm
    Co4 = D (x) Cw2      -> (N, E, E)     So4[n] = sum_m m*O_nm
    Co5 = Cd1 (x) Cw1    -> (E, E)        So5 = sum_nm O_nm
    Co6 = Cd1 (x) Cw2    -> (E, E)        So6 = sum_nm m*O_nm
    Co7 = Cd2 (x) Cw1    -> (E, E)        So7 = sum_nm n*O_nm

Checksums and summations accumulate in float64 whatever the tensor dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Iterable

import numpy as np

from .errors import ChecksumError, ShapeError
from .tensor import ConvParams, conv_forward, conv_shapes

ACC = np.float64
ALL = ("co1", "co2", "co3", "co4", "co5", "co6", "co7")

# dtype -> default comparison tolerance
DEFAULT_TAU = {np.dtype(np.float32): 1e-4, np.dtype(np.float64): 1e-10}


def default_tau(dtype) -> float:
    return DEFAULT_TAU.get(np.dtype(dtype), 1e-4)


def _key(k) -> str:
    """Normalise 'Co5', 'So5', 5, 'co5' to 'co5'."""
    if isinstance(k, int):
        return f"co{k}"
    k = str(k).lower()
    if k.startswith("so"):
        k = "co" + k[2:]
    if k not in ALL:
        raise KeyError(f"unknown checksum {k!r}")
    return k


def normalize(which: Iterable) -> frozenset[str]:
    return frozenset(_key(k) for k in which)


@dataclass
class InputChecksums:
    cd1: np.ndarray | None = None
    cd2: np.ndarray | None = None
    cw1: np.ndarray | None = None
    cw2: np.ndarray | None = None


def fmap_sum(D: np.ndarray) -> np.ndarray:
    """Cd1 alone (Cd2 is only needed once correction starts)."""
    return np.asarray(D).sum(axis=0, dtype=ACC)


def fmap_checksums(D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    D = np.asarray(D, dtype=ACC)
    n = np.arange(D.shape[0], dtype=ACC)
    return D.sum(axis=0), np.tensordot(n, D, axes=(0, 0))


def kernel_checksums(W: np.ndarray, groups: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """(Cw1, Cw2), each (Ch, R, R): group g's kernel sums fill channel group g."""
    W = np.asarray(W, dtype=ACC)
    M = W.shape[0]
    if M % groups:
        raise ShapeError(f"groups={groups} does not divide M={M}")
    mg = M // groups
    m = np.arange(M, dtype=ACC)
    cw1 = np.concatenate([W[g * mg:(g + 1) * mg].sum(axis=0) for g in range(groups)], axis=0)
    cw2 = np.concatenate(
        [np.tensordot(m[g * mg:(g + 1) * mg], W[g * mg:(g + 1) * mg], axes=(0, 0)) for g in range(groups)],
        axis=0,
    )
    return cw1, cw2


def input_checksums(D: np.ndarray, W: np.ndarray, G: int = 1) -> InputChecksums:
    D = np.asarray(D)
    W = np.asarray(W)
    if D.ndim != 4 or W.ndim != 4:
        raise ShapeError(f"D and W must be 4D, got {D.shape} and {W.shape}")
    if W.shape[1] * G != D.shape[1]:
        raise ShapeError(f"W channels {W.shape[1]} x G={G} != D channels {D.shape[1]}")
    cd1, cd2 = fmap_checksums(D)
    cw1, cw2 = kernel_checksums(W, G)
    return InputChecksums(cd1, cd2, cw1, cw2)


@dataclass
class OutputChecksums:
    co1: np.ndarray | None = None
    co2: np.ndarray | None = None
    co3: np.ndarray | None = None
    co4: np.ndarray | None = None
    co5: np.ndarray | None = None
    co6: np.ndarray | None = None
    co7: np.ndarray | None = None

    @property
    def present(self) -> frozenset[str]:
        return frozenset(f.name for f in fields(self) if getattr(self, f.name) is not None)

    def get(self, k) -> np.ndarray | None:
        return getattr(self, _key(k))

    def subset(self, which: Iterable) -> OutputChecksums:
        keep = normalize(which)
        return OutputChecksums(**{k: (getattr(self, k) if k in keep else None) for k in ALL})


def _conv_acc(D, W, params: ConvParams, groups: int) -> np.ndarray:
    p = params.replace(groups=groups, bias_enabled=False)
    return conv_forward(np.asarray(D, dtype=ACC), np.asarray(W, dtype=ACC), params=p)


def output_checksum(k, D, W, ic: InputChecksums, params: ConvParams) -> np.ndarray:
    """Compute a single output checksum (see module docstring for shapes)."""
    k = _key(k)
    G = params.groups
    needs = {
        "co1": ("cd1",), "co3": ("cd2",), "co2": ("cw1",), "co4": ("cw2",),
        "co5": ("cd1", "cw1"), "co6": ("cd1", "cw2"), "co7": ("cd2", "cw1"),
    }[k]
    for name in needs:
        if getattr(ic, name) is None:
            raise ChecksumError(f"{k} requires input checksum {name}")
    if k == "co1":
        return _conv_acc(ic.cd1[None], W, params, G)[0]
    if k == "co3":
        return _conv_acc(ic.cd2[None], W, params, G)[0]
    if k == "co2":
        return _conv_acc(D, ic.cw1[None], params, 1)[:, 0]
    if k == "co4":
        return _conv_acc(D, ic.cw2[None], params, 1)[:, 0]
    d = ic.cd2 if k == "co7" else ic.cd1
    w = ic.cw2 if k == "co6" else ic.cw1
    return _conv_acc(d[None], w[None], params, 1)[0, 0]


def output_checksums(which, D, W, ic: InputChecksums, params: ConvParams,
                     cached: OutputChecksums | None = None) -> OutputChecksums:
    """Compute the requested output checksums, reusing anything already in ``cached``."""
    out = replace(cached) if cached is not None else OutputChecksums()
    for k in sorted(normalize(which)):
        if getattr(out, k) is None:
            setattr(out, k, output_checksum(k, D, W, ic, params))
    return out


@dataclass
class OutputSummations:
    so1: np.ndarray | None = None
    so2: np.ndarray | None = None
    so3: np.ndarray | None = None
    so4: np.ndarray | None = None
    so5: np.ndarray | None = None
    so6: np.ndarray | None = None
    so7: np.ndarray | None = None
    # bias vector already subtracted (None when O carries no bias)
    bias: np.ndarray | None = field(default=None, repr=False)

    @property
    def present(self) -> frozenset[str]:
        return frozenset(
            "co" + f.name[2:] for f in fields(self)
            if f.name != "bias" and getattr(self, f.name) is not None
        )

    def get(self, k) -> np.ndarray | None:
        return getattr(self, "so" + _key(k)[2:])


def summation(k, O: np.ndarray) -> np.ndarray:
    k = _key(k)
    O = np.asarray(O)
    N, M = O.shape[:2]
    n = np.arange(N, dtype=ACC)
    m = np.arange(M, dtype=ACC)
    if k == "co1":
        return O.sum(axis=0, dtype=ACC)
    if k == "co2":
        return O.sum(axis=1, dtype=ACC)
    if k == "co3":
        return np.tensordot(n, O.astype(ACC), axes=(0, 0))
    if k == "co4":
        return np.tensordot(m, O.astype(ACC), axes=(0, 1))
    if k == "co5":
        return O.sum(axis=(0, 1), dtype=ACC)
    if k == "co6":
        return np.tensordot(m, O.sum(axis=0, dtype=ACC), axes=(0, 0))
    return np.tensordot(n, O.sum(axis=1, dtype=ACC), axes=(0, 0))


def output_summations(O: np.ndarray, which, bias=None) -> OutputSummations:
    """Block summations of O; with ``bias`` given they are bias-adjusted."""
    O = np.asarray(O)
    if O.ndim != 4:
        raise ShapeError(f"O must be 4D, got {O.shape}")
    s = OutputSummations(**{"so" + k[2:]: summation(k, O) for k in normalize(which)})
    if bias is not None:
        s = bias_adjust(s, bias, O.shape[0])
    return s


def bias_offset(k, B: np.ndarray, N: int) -> np.ndarray:
    """Amount of bias contained in summation k, broadcastable against it.

    Row-index weights are 0-based, so the row-weighted aggregate is
    sum_{n<N} n = N(N-1)/2.
    """
    k = _key(k)
    B = np.asarray(B, dtype=ACC).reshape(-1)
    m = np.arange(B.shape[0], dtype=ACC)
    nsum = N * (N - 1) / 2.0
    if k == "co1":
        return (N * B)[:, None, None]
    if k == "co3":
        return (nsum * B)[:, None, None]
    if k == "co2":
        return np.asarray(B.sum())
    if k == "co4":
        return np.asarray(m @ B)
    if k == "co5":
        return np.asarray(N * B.sum())
    if k == "co6":
        return np.asarray(N * (m @ B))
    return np.asarray(nsum * B.sum())


def bias_adjust(s: OutputSummations, B, N: int) -> OutputSummations:
    """Remove the bias contribution from every present summation."""
    B = np.asarray(B, dtype=ACC).reshape(-1)
    M = None
    for k in ("co1", "co3"):
        v = s.get(k)
        if v is not None:
            M = v.shape[0]
    if M is not None and B.shape[0] != M:
        raise ShapeError(f"bias has {B.shape[0]} entries, expected M={M}")
    out = OutputSummations(bias=B if s.bias is None else s.bias + B)
    for k in s.present:
        setattr(out, "so" + k[2:], s.get(k) - bias_offset(k, B, N))
    return out


def tolerance(c: np.ndarray, s: np.ndarray, tau: float) -> np.ndarray:
    return tau * np.maximum(np.maximum(np.abs(c), np.abs(s)), 1.0)


def mismatch(c: np.ndarray, s: np.ndarray, tau: float) -> np.ndarray:
    """Elementwise |c - s| > tau * max(|c|, |s|, 1); non-finite entries always mismatch."""
    with np.errstate(invalid="ignore", over="ignore"):
        ok = np.abs(c - s) <= tolerance(c, s, tau)
    return ~(ok & np.isfinite(c) & np.isfinite(s))


def verify_kernel(W: np.ndarray, cw1_ref: np.ndarray, tau: float, groups: int = 1) -> bool:
    """True iff the live kernels still sum to the reference Cw1 within tau."""
    cw1, _ = kernel_checksums(W, groups)
    if cw1.shape != np.shape(cw1_ref):
        return False
    return not mismatch(cw1, np.asarray(cw1_ref), tau).any()


def conv_dims(D, W, params: ConvParams) -> tuple[int, int, int, int, int]:
    return conv_shapes(np.asarray(D), np.asarray(W), params)
