"""Deterministic fault injection: specs, ground truth, workflow hooks, campaigns, corpus files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .checksums import (
    InputChecksums,
    OutputChecksums,
    fmap_checksums,
    kernel_checksums,
    output_checksum,
    summation,
)
from .errors import FaultSpecError
from .tensor import ConvParams, conv_forward
from .workflow import Hook

OUTPUT_TARGETS = ("output_block", "output_row", "output_column")
DATA_TARGETS = OUTPUT_TARGETS + ("fmap", "kernel")
TARGETS = DATA_TARGETS + ("checksum",)
INPUT_CHECKSUMS = ("cd1", "cd2", "cw1", "cw2")
OUTPUT_CHECKSUMS = ("co1", "co2", "co3", "co4", "co5", "co6", "co7")
MAGNITUDES = ("add", "scale", "bitflip")

# scale faults multiply by (1 + u), u ~ U[SCALE_LO, SCALE_HI]
SCALE_LO, SCALE_HI = 0.5, 2.0
# a fault is "above threshold" when it moves Co5 - So5 by more than this many tau
THRESHOLD_FACTOR = 10.0

# stage order used for ground-truth comparisons
CHAIN_ORDER = {"none": 0, "coc": 1, "rc": 2, "clc": 3, "fc": 4, "recompute": 5}


@dataclass(frozen=True)
class FaultSpec:
    """One fault episode.

    ``i`` is a block row (fmap index / output row), ``j`` a block column
    (kernel index / output column). ``elem`` gives element coordinates inside
    the targeted block: (x, y) for output tiles, (k, x, y) for fmaps and
    kernels, a full index for checksum arrays. ``elem=None`` means every
    element of the block(s).
    """

    layer_index: int
    target: str
    i: int | None = None
    j: int | None = None
    elem: tuple[int, ...] | None = None
    checksum: str | None = None
    magnitude: str = "scale"
    value: float = 0.0
    bit: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.target not in TARGETS:
            raise FaultSpecError(f"unknown target {self.target!r}")
        if self.magnitude not in MAGNITUDES:
            raise FaultSpecError(f"unknown magnitude kind {self.magnitude!r}")
        if self.magnitude == "bitflip" and self.bit is None:
            raise FaultSpecError("bitflip fault needs a bit index")
        if self.target == "checksum" and self.checksum not in INPUT_CHECKSUMS + OUTPUT_CHECKSUMS:
            raise FaultSpecError(f"unknown checksum {self.checksum!r}")
        need_i = self.target in ("output_block", "output_row", "fmap")
        need_j = self.target in ("output_block", "output_column", "kernel")
        if need_i and self.i is None:
            raise FaultSpecError(f"{self.target} fault needs block row i")
        if need_j and self.j is None:
            raise FaultSpecError(f"{self.target} fault needs block column j")
        if self.elem is not None:
            object.__setattr__(self, "elem", tuple(int(v) for v in self.elem))
        if not 0 <= self.seed < 2 ** 64:
            raise FaultSpecError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def label(self) -> str:
        return f"checksum:{self.checksum}" if self.target == "checksum" else self.target

    def to_json(self) -> dict:
        d = asdict(self)
        d["elem"] = None if self.elem is None else list(self.elem)
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> FaultSpec:
        d = dict(d)
        if d.get("elem") is not None:
            d["elem"] = tuple(d["elem"])
        return cls(**d)


@dataclass
class GroundTruth:
    """Expected effect of a fault.

    ``pattern`` is the corruption shape in O: block, row, column,
    checksum_discard (a checksum CoC-D relies on) or benign (never seen by
    detection).
    """

    pattern: str
    corrupted_blocks: list[tuple[int, int]] = field(default_factory=list)

    def expected_stage(self, rc_enabled: bool = True, clc_enabled: bool = False) -> str:
        if self.pattern == "block":
            return "coc"
        if self.pattern == "row":
            return "rc" if rc_enabled else "fc"
        if self.pattern == "column":
            return "clc" if clc_enabled else "fc"
        if self.pattern == "checksum_discard":
            return "checksum_discard"
        return "none"

    def to_json(self) -> dict:
        return {"pattern": self.pattern, "corrupted_blocks": [list(b) for b in self.corrupted_blocks]}

    @classmethod
    def from_json(cls, d: Mapping) -> GroundTruth:
        return cls(d["pattern"], [tuple(b) for b in d.get("corrupted_blocks", [])])


def stage_within(resolved: str, expected: str) -> bool:
    """True if ``resolved`` is no later in the chain than ``expected``."""
    if expected in ("checksum_discard", "none") or resolved in ("checksum_discard",):
        return resolved == expected
    return CHAIN_ORDER.get(resolved, 99) <= CHAIN_ORDER[expected]


@dataclass(frozen=True)
class Dims:
    """Block counts needed to derive ground truth (Ch only matters for grouped fmap faults)."""

    N: int
    M: int
    G: int = 1
    Ch: int | None = None


def ground_truth(spec: FaultSpec, dims: Dims) -> GroundTruth:
    N, M, G = dims.N, dims.M, dims.G
    t = spec.target
    if t == "output_block":
        return GroundTruth("block", [(spec.i, spec.j)])
    if t in ("output_row", "fmap"):
        cols = list(range(M))
        if t == "fmap" and spec.elem is not None and G > 1:
            # a single fmap element reaches only the kernels of its channel group
            if dims.Ch is None:
                raise FaultSpecError("grouped fmap fault ground truth needs the channel count")
            g = spec.elem[0] // (dims.Ch // G)
            mg = M // G
            cols = list(range(g * mg, (g + 1) * mg))
        blocks = [(spec.i, m) for m in cols]
        return GroundTruth("block" if len(blocks) == 1 else "row", blocks)
    if t in ("output_column", "kernel"):
        blocks = [(n, spec.j) for n in range(N)]
        return GroundTruth("block" if len(blocks) == 1 else "column", blocks)
    if spec.checksum in ("cd1", "cw1", "co5"):
        return GroundTruth("checksum_discard")
    return GroundTruth("benign")


# ---------------------------------------------------------------- mutation

def _uint_view(arr: np.ndarray) -> np.ndarray:
    return arr.view(np.uint32 if arr.dtype == np.float32 else np.uint64)


def _bits(dtype) -> int:
    return np.dtype(dtype).itemsize * 8


def safe_bits(dtype) -> list[int]:
    """Bit positions used by campaigns: all but the exponent MSB, whose flip can overflow to inf."""
    n = _bits(dtype)
    return [b for b in range(n) if b != n - 2]


def _index(shape: Sequence[int], spec: FaultSpec) -> tuple:
    """Index expression selecting the faulted elements of an array of ``shape``."""
    t = spec.target

    def check(name, v, hi):
        if not 0 <= v < hi:
            raise FaultSpecError(f"{name}={v} out of range [0, {hi})")
        return v

    def elem(block_ndim, inner_shape):
        if spec.elem is None:
            return (slice(None),) * block_ndim
        if len(spec.elem) != block_ndim:
            raise FaultSpecError(f"elem {spec.elem} must have {block_ndim} coordinates for {t}")
        return tuple(check("elem", v, hi) for v, hi in zip(spec.elem, inner_shape))

    if t == "checksum":
        return elem(len(shape), shape)
    if len(shape) != 4:
        raise FaultSpecError(f"{t} fault needs a 4D array, got shape {tuple(shape)}")
    if t == "output_block":
        return (check("i", spec.i, shape[0]), check("j", spec.j, shape[1])) + elem(2, shape[2:])
    if t == "output_row":
        return (check("i", spec.i, shape[0]), slice(None)) + elem(2, shape[2:])
    if t == "output_column":
        return (slice(None), check("j", spec.j, shape[1])) + elem(2, shape[2:])
    if t == "fmap":
        return (check("i", spec.i, shape[0]),) + elem(3, shape[1:])
    return (check("j", spec.j, shape[0]),) + elem(3, shape[1:])


def _perturb(values: np.ndarray, spec: FaultSpec) -> np.ndarray:
    values = np.array(values, copy=True)
    if spec.magnitude == "add":
        return values + values.dtype.type(spec.value)
    if spec.magnitude == "scale":
        rng = np.random.default_rng(spec.seed)
        u = rng.uniform(SCALE_LO, SCALE_HI, size=values.shape)
        return (values * (1.0 + u)).astype(values.dtype)
    if not 0 <= spec.bit < _bits(values.dtype):
        raise FaultSpecError(f"bit {spec.bit} out of range for {values.dtype}")
    flat = np.ascontiguousarray(values).reshape(-1)
    bits = _uint_view(flat)
    bits ^= bits.dtype.type(1 << spec.bit)
    return flat.reshape(values.shape)


def mutate_inplace(arr: np.ndarray, spec: FaultSpec) -> int:
    """Apply ``spec`` to ``arr`` in place; return the number of changed elements."""
    idx = _index(arr.shape, spec)
    old = np.array(arr[idx], copy=True)
    arr[idx] = _perturb(old, spec)
    return int(np.count_nonzero(np.asarray(arr[idx]) != old))


def inject(data, spec: FaultSpec, dims: Dims | None = None) -> tuple[np.ndarray, GroundTruth]:
    """Return a mutated copy of ``data`` and the fault's ground truth.

    ``data`` is O for output targets, D for fmap, W for kernel, or the
    checksum array. ``dims`` defaults to what can be read off ``data``.
    """
    arr = np.array(data, copy=True)
    if arr.dtype.type not in (np.float32, np.float64):
        raise FaultSpecError(f"cannot inject into dtype {arr.dtype}")
    mutate_inplace(arr, spec)
    if dims is None:
        if spec.target in OUTPUT_TARGETS:
            dims = Dims(arr.shape[0], arr.shape[1])
        elif spec.target == "fmap":
            dims = Dims(arr.shape[0], 0)
        elif spec.target == "kernel":
            dims = Dims(0, arr.shape[0])
        else:
            dims = Dims(0, 0)
    if spec.target == "fmap" and dims.M == 0:
        raise FaultSpecError("fmap ground truth needs the kernel count M (pass dims)")
    if spec.target == "kernel" and dims.N == 0:
        raise FaultSpecError("kernel ground truth needs the batch size N (pass dims)")
    return arr, ground_truth(spec, dims)


# ---------------------------------------------------------------- workflow hook

class FaultHook(Hook):
    """Applies one FaultSpec at its injection point, exactly once.

    fmap faults are transient (only the convolution sees the corrupted
    copy); kernel faults are persistent and applied to the live kernels by
    :meth:`prepare`; checksum faults corrupt the named cached checksum the
    first time it exists.
    """

    def __init__(self, spec: FaultSpec):
        self.spec = spec
        self.fired = False
        self.changed = 0

    def prepare(self, layer) -> None:
        if self.spec.target == "kernel" and not self.fired:
            self.changed = mutate_inplace(layer.W, self.spec)
            self.fired = True

    def conv_input(self, D):
        if self.spec.target != "fmap" or self.fired:
            return D
        Dc = np.array(D, copy=True)
        self.changed = mutate_inplace(Dc, self.spec)
        self.fired = True
        return Dc

    def output(self, O):
        if self.spec.target in OUTPUT_TARGETS and not self.fired:
            self.changed = mutate_inplace(O, self.spec)
            self.fired = True

    def checksums(self, ic: InputChecksums, cs: OutputChecksums | None) -> None:
        if self.spec.target != "checksum" or self.fired:
            return
        name = self.spec.checksum
        holder = ic if name in INPUT_CHECKSUMS else cs
        arr = None if holder is None else getattr(holder, name)
        if arr is not None:
            self.changed = mutate_inplace(arr, self.spec)
            self.fired = True


def fault_effect(D, layer, spec: FaultSpec, tau: float) -> tuple[bool, float]:
    """Whether the fault moves Co5 - So5 above threshold, and the largest move in units of tau.

    Runs the faulted layer without protection on clean copies of the data.
    """
    params: ConvParams = layer.params
    W = np.array(layer.golden, copy=True)
    G = params.groups
    cd1, cd2 = fmap_checksums(D)
    cw1, cw2 = kernel_checksums(W, G)
    ic = InputChecksums(cd1, cd2, cw1, cw2)
    co5 = output_checksum("co5", D, W, ic, params)
    Dx, Wx = D, W
    if spec.target == "fmap":
        Dx = np.array(D, copy=True)
        mutate_inplace(Dx, spec)
    elif spec.target == "kernel":
        Wx = np.array(W, copy=True)
        mutate_inplace(Wx, spec)
    O = conv_forward(Dx, Wx, layer.B, params)
    if spec.target in OUTPUT_TARGETS:
        mutate_inplace(O, spec)
    co5x = co5
    if spec.target == "checksum":
        if spec.checksum in INPUT_CHECKSUMS:
            icx = InputChecksums(*(np.array(getattr(ic, n), copy=True) for n in INPUT_CHECKSUMS))
            mutate_inplace(getattr(icx, spec.checksum), spec)
            co5x = output_checksum("co5", D, W, icx, params)
        elif spec.checksum == "co5":
            co5x = np.array(co5, copy=True)
            mutate_inplace(co5x, spec)
    so5 = summation("co5", O)
    if layer.B is not None and params.bias_enabled:
        so5 = so5 - O.shape[0] * np.asarray(layer.B, dtype=np.float64).sum()
    with np.errstate(invalid="ignore", over="ignore"):
        ratio = np.abs(co5x - so5) / (tau * np.maximum(np.abs(co5), 1.0))
    if not np.all(np.isfinite(ratio)):
        return True, float("inf")
    worst = float(ratio.max(initial=0.0))
    return worst > THRESHOLD_FACTOR, worst


# ---------------------------------------------------------------- campaigns

DEFAULT_DISTRIBUTION = {
    "output_block": 1.0,
    "output_row": 1.0,
    "output_column": 1.0,
    "fmap": 1.0,
    "kernel": 1.0,
    "checksum:cd1": 1.0,
    "checksum:cd2": 1.0,
    "checksum:cw1": 1.0,
    "checksum:cw2": 1.0,
}

# probability that a campaign fault uses a bit flip rather than a scale factor
BITFLIP_SHARE = 0.4


@dataclass(frozen=True)
class LayerShape:
    """Shapes one campaign needs per layer."""

    N: int
    Ch: int
    H: int
    M: int
    R: int
    E: int
    G: int = 1
    dtype: str = "float32"


@dataclass
class CorpusEntry:
    run: int
    spec: FaultSpec
    truth: GroundTruth

    def to_json(self) -> dict:
        return {"run": self.run, "spec": self.spec.to_json(), "ground_truth": self.truth.to_json()}

    @classmethod
    def from_json(cls, d: Mapping) -> CorpusEntry:
        return cls(int(d["run"]), FaultSpec.from_json(d["spec"]), GroundTruth.from_json(d["ground_truth"]))


def _draw_spec(rng: np.random.Generator, run: int, layer_index: int, shape: LayerShape,
               label: str) -> FaultSpec:
    seed = int(rng.integers(0, 2 ** 63))
    target, _, cname = label.partition(":")
    if target not in TARGETS:
        raise FaultSpecError(f"unknown campaign target {label!r}")
    kw: dict = {"layer_index": layer_index, "target": target, "seed": seed}
    everywhere = rng.random() < 0.3
    if target in OUTPUT_TARGETS:
        if target in ("output_block", "output_row"):
            kw["i"] = int(rng.integers(shape.N))
        if target in ("output_block", "output_column"):
            kw["j"] = int(rng.integers(shape.M))
        if not everywhere:
            kw["elem"] = (int(rng.integers(shape.E)), int(rng.integers(shape.E)))
        dtype = shape.dtype
    elif target == "fmap":
        kw["i"] = int(rng.integers(shape.N))
        kw["elem"] = (int(rng.integers(shape.Ch)), int(rng.integers(shape.H)), int(rng.integers(shape.H)))
        dtype = shape.dtype
    elif target == "kernel":
        kw["j"] = int(rng.integers(shape.M))
        kw["elem"] = (int(rng.integers(shape.Ch // shape.G)), int(rng.integers(shape.R)),
                      int(rng.integers(shape.R)))
        dtype = shape.dtype
    else:
        if cname not in INPUT_CHECKSUMS + OUTPUT_CHECKSUMS:
            raise FaultSpecError(f"unknown checksum in campaign target {label!r}")
        kw["checksum"] = cname
        if cname in INPUT_CHECKSUMS:
            kw["elem"] = (int(rng.integers(shape.Ch)), int(rng.integers(shape.H)), int(rng.integers(shape.H)))
            if cname.startswith("cw"):
                kw["elem"] = (kw["elem"][0], int(rng.integers(shape.R)), int(rng.integers(shape.R)))
        else:
            kw["elem"] = None
        dtype = "float64"
    if rng.random() < BITFLIP_SHARE:
        kw["magnitude"] = "bitflip"
        bits = safe_bits(dtype)
        kw["bit"] = int(bits[int(rng.integers(len(bits)))])
    else:
        kw["magnitude"] = "scale"
    return FaultSpec(**kw)


def campaign(shapes: Sequence[LayerShape], n_runs: int,
             distribution: Mapping[str, float] | None = None, seed: int = 0) -> list[CorpusEntry]:
    """Reproducible fault corpus; run r injects one fault into layer r mod L."""
    if not shapes:
        raise FaultSpecError("campaign needs at least one layer")
    if n_runs < 0:
        raise FaultSpecError("n_runs must be nonnegative")
    dist = dict(DEFAULT_DISTRIBUTION if distribution is None else distribution)
    labels = sorted(dist)
    weights = np.array([dist[k] for k in labels], dtype=float)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise FaultSpecError("distribution weights must be finite and nonnegative")
    if weights.sum() <= 0:
        raise FaultSpecError("distribution weights sum to zero")
    probs = weights / weights.sum()
    out = []
    for run in range(n_runs):
        li = run % len(shapes)
        sh = shapes[li]
        rng = np.random.default_rng([seed, run])
        label = labels[int(rng.choice(len(labels), p=probs))]
        spec = _draw_spec(rng, run, li, sh, label)
        truth = ground_truth(spec, Dims(sh.N, sh.M, sh.G, sh.Ch))
        out.append(CorpusEntry(run, spec, truth))
    return out


def dumps_corpus(entries: Iterable[CorpusEntry]) -> str:
    return "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in entries)


def write_corpus(path, entries: Iterable[CorpusEntry]) -> None:
    Path(path).write_text(dumps_corpus(entries), encoding="utf-8")


def read_corpus(path) -> list[CorpusEntry]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(CorpusEntry.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise FaultSpecError(f"{path}:{n}: bad corpus line ({e})") from None
    return out
