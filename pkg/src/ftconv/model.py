"""Model configs (JSON), the FTCN weight file format, and sequential forward passes.

Weight file layout (all little-endian):

    b"FTCN"  u32 version (=1)  u32 layer_count
    per layer: 5 x u32  (M, Ch/G, R, R, bias_flag)
    then per layer: M*(Ch/G)*R*R float32 kernel values, followed by M float32 biases if bias_flag
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checksums import default_tau
from .errors import ConfigError, WeightFileError
from .layer import ConvLayer
from .tensor import ConvParams

MAGIC = b"FTCN"
VERSION = 1
DTYPES = {"float32": np.float32, "float64": np.float64}
ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True)
class LayerConfig:
    name: str
    N: int
    Ch: int
    H: int
    M: int
    R: int
    U: int = 1
    pad: int = 0
    G: int = 1
    bias: bool = False
    activation: str = "relu"

    def __post_init__(self):
        for f in ("N", "Ch", "H", "M", "R", "U", "G"):
            v = getattr(self, f)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"layer {self.name}: {f} must be a positive integer, got {v!r}")
        if not isinstance(self.pad, int) or self.pad < 0:
            raise ConfigError(f"layer {self.name}: pad must be a nonnegative integer, got {self.pad!r}")
        if self.Ch % self.G or self.M % self.G:
            raise ConfigError(f"layer {self.name}: G={self.G} must divide Ch={self.Ch} and M={self.M}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"layer {self.name}: unknown activation {self.activation!r}")
        self.params.out_size(self.H, self.R)

    @property
    def params(self) -> ConvParams:
        return ConvParams(stride=self.U, groups=self.G, pad=self.pad, bias_enabled=self.bias)

    @property
    def E(self) -> int:
        return self.params.out_size(self.H, self.R)

    @property
    def kernel_shape(self) -> tuple[int, int, int, int]:
        return (self.M, self.Ch // self.G, self.R, self.R)

    @property
    def input_shape(self) -> tuple[int, int, int, int]:
        return (self.N, self.Ch, self.H, self.H)


@dataclass(frozen=True)
class ModelConfig:
    layers: tuple[LayerConfig, ...]
    dtype: str = "float32"
    tau: float | None = None

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("model has no layers")
        if self.dtype not in DTYPES:
            raise ConfigError(f"unknown dtype {self.dtype!r}; expected one of {sorted(DTYPES)}")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ConfigError("layer names must be unique")
        for a, b in zip(self.layers, self.layers[1:]):
            if (a.N, a.M, a.E) != (b.N, b.Ch, b.H):
                raise ConfigError(
                    f"layers {a.name} -> {b.name} do not chain: output (N={a.N}, M={a.M}, E={a.E}) "
                    f"vs input (N={b.N}, Ch={b.Ch}, H={b.H})"
                )

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    @property
    def effective_tau(self) -> float:
        return self.tau if self.tau is not None else default_tau(self.np_dtype)

    def to_json(self) -> dict:
        return {"dtype": self.dtype, "tau": self.tau, "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_json(cls, doc) -> ModelConfig:
        if not isinstance(doc, dict) or "layers" not in doc:
            raise ConfigError("model config must be an object with a 'layers' list")
        try:
            layers = tuple(LayerConfig(**l) for l in doc["layers"])
        except TypeError as e:
            raise ConfigError(f"bad layer entry: {e}") from None
        return cls(layers, doc.get("dtype", "float32"), doc.get("tau"))


def load_config(path) -> ModelConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise WeightFileError(f"cannot read config {path}: {e}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path}: {e}") from None
    return ModelConfig.from_json(doc)


def save_config(path, cfg: ModelConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_json(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- weight files

_HEADER = struct.Struct("<4sII")
_LAYER = struct.Struct("<5I")


def encode_weights(layers: Sequence[tuple[np.ndarray, np.ndarray | None]]) -> bytes:
    """Serialize [(W, B or None), ...] to the FTCN format."""
    parts = [_HEADER.pack(MAGIC, VERSION, len(layers))]
    for W, B in layers:
        M, C, R, R2 = np.shape(W)
        parts.append(_LAYER.pack(M, C, R, R2, 0 if B is None else 1))
    for W, B in layers:
        parts.append(np.asarray(W, dtype="<f4").tobytes())
        if B is not None:
            parts.append(np.asarray(B, dtype="<f4").reshape(-1).tobytes())
    return b"".join(parts)


def decode_weights(buf: bytes) -> list[tuple[np.ndarray, np.ndarray | None]]:
    if len(buf) < _HEADER.size:
        raise WeightFileError(f"weight file truncated: header needs {_HEADER.size} bytes, got {len(buf)}")
    magic, version, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise WeightFileError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    dims_end = _HEADER.size + count * _LAYER.size
    if len(buf) < dims_end:
        raise WeightFileError(f"weight file truncated: header needs {dims_end} bytes, got {len(buf)}")
    dims = [_LAYER.unpack_from(buf, _HEADER.size + k * _LAYER.size) for k in range(count)]
    sizes = [(M * C * R * R2, M if bias else 0) for M, C, R, R2, bias in dims]
    expected = dims_end + 4 * sum(a + b for a, b in sizes)
    if len(buf) != expected:
        kind = "truncated" if len(buf) < expected else "has trailing data"
        raise WeightFileError(f"weight file {kind}: expected {expected} bytes, got {len(buf)}")
    out = []
    off = dims_end
    for (M, C, R, R2, bias), (nw, nb) in zip(dims, sizes):
        W = np.frombuffer(buf, dtype="<f4", count=nw, offset=off).reshape(M, C, R, R2).astype(np.float32)
        off += 4 * nw
        B = None
        if bias:
            B = np.frombuffer(buf, dtype="<f4", count=nb, offset=off).astype(np.float32)
            off += 4 * nb
        out.append((W, B))
    return out


def save_weights(path, layers) -> None:
    Path(path).write_bytes(encode_weights(layers))


def load_weights(path) -> list[tuple[np.ndarray, np.ndarray | None]]:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise WeightFileError(f"cannot read weights {path}: {e}") from None
    return decode_weights(buf)


# ---------------------------------------------------------------- models

@dataclass
class Model:
    config: ModelConfig
    layers: list[ConvLayer] = field(default_factory=list)

    @property
    def tau(self) -> float:
        return self.config.effective_tau

    def copy(self) -> Model:
        """Fresh model from the golden weights (live kernels restored)."""
        return build_model(self.config, [(l.golden, l.golden_B) for l in self.layers])

    def make_input(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        shape = self.config.layers[0].input_shape
        return rng.uniform(-1.0, 1.0, shape).astype(self.config.np_dtype)

    def forward(self, D, impl: str = "direct",
                layer_fn: Callable | None = None) -> tuple[np.ndarray, list[np.ndarray]]:
        """Sequential forward; ``layer_fn(index, layer, D)`` may replace the plain convolution.

        Returns the final activation and every layer's pre-activation output.
        """
        x = np.asarray(D, dtype=self.config.np_dtype)
        expect = self.config.layers[0].input_shape
        if x.shape != expect:
            raise ConfigError(f"input has shape {x.shape}, model expects {expect}")
        outs = []
        for k, (lc, layer) in enumerate(zip(self.config.layers, self.layers)):
            O = layer.forward(x, impl) if layer_fn is None else layer_fn(k, layer, x)
            outs.append(O)
            x = np.maximum(O, 0) if lc.activation == "relu" else O
        return x, outs


def build_model(cfg: ModelConfig, weights: Sequence[tuple[np.ndarray, np.ndarray | None]]) -> Model:
    if len(weights) != len(cfg.layers):
        raise WeightFileError(f"weight file has {len(weights)} layers, config has {len(cfg.layers)}")
    dt = cfg.np_dtype
    layers = []
    for lc, (W, B) in zip(cfg.layers, weights):
        if tuple(W.shape) != lc.kernel_shape:
            raise WeightFileError(f"layer {lc.name}: kernel shape {tuple(W.shape)} != config {lc.kernel_shape}")
        if (B is not None) != lc.bias:
            raise WeightFileError(f"layer {lc.name}: bias flag in weights disagrees with config")
        if not np.all(np.isfinite(W)) or (B is not None and not np.all(np.isfinite(B))):
            raise WeightFileError(f"layer {lc.name}: non-finite weights")
        layers.append(ConvLayer(lc.name, np.asarray(W, dtype=dt),
                                None if B is None else np.asarray(B, dtype=dt), lc.params))
    return Model(cfg, layers)


def load_model(config_path, weights_path) -> Model:
    cfg = load_config(config_path)
    return build_model(cfg, load_weights(weights_path))


def random_weights(cfg: ModelConfig, seed: int) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """He-style uniform kernels and small biases, exactly representable in float32."""
    rng = np.random.default_rng(seed)
    out = []
    for lc in cfg.layers:
        fan_in = (lc.Ch // lc.G) * lc.R * lc.R
        lim = np.sqrt(6.0 / fan_in)
        W = rng.uniform(-lim, lim, lc.kernel_shape).astype(np.float32)
        B = rng.uniform(-0.1, 0.1, lc.M).astype(np.float32) if lc.bias else None
        out.append((W, B))
    return out


def demo_config(N: int = 2, dtype: str = "float32") -> ModelConfig:
    """A small three-layer network used by the CLI's init-model command and the tests."""
    return ModelConfig(
        (
            LayerConfig("conv1", N, 3, 16, 8, 3, 1, 1, 1, True),
            LayerConfig("conv2", N, 8, 16, 8, 2, 2, 0, 2, True),
            LayerConfig("conv3", N, 8, 8, 6, 3, 1, 0, 1, False, "none"),
        ),
        dtype,
    )
