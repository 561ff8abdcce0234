"""4-bit normal-float quantization with doubly quantized scale constants,
low-rank adapter kernels, and trainable-parameter accounting.

Quantization works on flattened row-major blocks. Each block stores 4-bit
codes into a 16-level codebook derived from standard-normal quantiles,
scaled by the block's absolute maximum (c2). The c2 constants are
themselves stored as 8-bit affine-quantized values in groups of 256, with
one float32 (scale, offset) pair per group (c1). Dequantization first
recovers c2 from c1, then values as level * c2.

Code assignment uses the true block absmax, so every block carries at
least one code at level +-1.0; combined with min/max-anchored affine
storage of c2 this makes quantize(dequant(quantize(W))) reproduce codes
and constants exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, FormatError, InputError, ShapeError

MAGIC = b"LLNF4\x00\x00\x01"

DEFAULT_BLOCK_SIZE = 64
C2_GROUP_SIZE = 256


@dataclass(frozen=True)
class Nf4Code:
    """The 16 quantization levels, sorted, spanning [-1, 1] with exact 0."""

    levels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "levels", np.asarray(self.levels, dtype=np.float64))
        self.levels.setflags(write=False)

    @property
    def zero_index(self) -> int:
        return int(np.where(self.levels == 0.0)[0][0])

    def half_max_gap(self) -> float:
        return float(np.max(np.diff(self.levels)) / 2.0)


def nf4_levels() -> Nf4Code:
    """Build the 16-level codebook from evenly spaced normal quantiles.

    The quantile range is offset so the outermost levels sit at the
    expected absolute maximum of the block distribution; eight levels
    cover the positive half, seven the negative half, plus an exact zero.
    Normalizing by the largest magnitude pins the endpoints to +-1.
    """
    offset = 1.0 - 0.5 * (1.0 / 32.0 + 1.0 / 30.0)
    positive = norm.ppf(np.linspace(offset, 0.5, 9))[:-1]
    negative = -norm.ppf(np.linspace(offset, 0.5, 8))[:-1]
    raw = np.concatenate([negative, [0.0], positive])
    raw.sort()
    return Nf4Code(raw / raw.max())


_LEVELS = None


def _levels() -> np.ndarray:
    global _LEVELS
    if _LEVELS is None:
        _LEVELS = nf4_levels().levels
    return _LEVELS


@dataclass(frozen=True)
class QuantizedBlockTensor:
    """Blockwise 4-bit tensor with doubly quantized absmax constants."""

    shape: tuple[int, int]
    block_size: int
    codes: np.ndarray      # uint8 level indices, one per element
    c2_bytes: np.ndarray   # uint8, one per block
    c1: np.ndarray         # float32 (n_groups, 2): scale, offset per group

    def __post_init__(self):
        n = self.shape[0] * self.shape[1]
        n_blocks = -(-n // self.block_size)
        if self.codes.shape != (n,):
            raise ShapeError(f"codes length {self.codes.shape} != element count {n}")
        if self.c2_bytes.shape != (n_blocks,):
            raise ShapeError(f"c2 length {self.c2_bytes.shape} != block count {n_blocks}")
        n_groups = -(-n_blocks // C2_GROUP_SIZE)
        if self.c1.shape != (n_groups, 2):
            raise ShapeError(f"c1 shape {self.c1.shape} != ({n_groups}, 2)")

    @property
    def n_blocks(self) -> int:
        return self.c2_bytes.shape[0]

    def c2_values(self) -> np.ndarray:
        """Dequantize the per-block absmax constants from c1.

        Bytes 0 and 255 map to the group lo/hi exactly, which keeps
        re-quantization of already-quantized constants bit-stable.
        """
        lo = np.repeat(self.c1[:, 0], C2_GROUP_SIZE)[: self.n_blocks]
        hi = np.repeat(self.c1[:, 1], C2_GROUP_SIZE)[: self.n_blocks]
        scale = ((hi - lo) / np.float32(255.0)).astype(np.float32)
        b = self.c2_bytes.astype(np.float32)
        interp = (lo + b * scale).astype(np.float32)
        return np.where(self.c2_bytes == 255, hi, interp).astype(np.float32)

    def save(self, path: str | Path) -> None:
        n = self.shape[0] * self.shape[1]
        packed = np.zeros((n + 1) // 2, dtype=np.uint8)
        packed |= self.codes[0::2]
        packed[: n // 2] |= self.codes[1::2] << 4
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<QQI", self.shape[0], self.shape[1], self.block_size))
            fh.write(packed.tobytes())
            fh.write(self.c2_bytes.tobytes())
            fh.write(np.ascontiguousarray(self.c1, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "QuantizedBlockTensor":
        raw = Path(path).read_bytes()
        head = len(MAGIC) + 20
        if len(raw) < head or raw[: len(MAGIC)] != MAGIC:
            raise FormatError(f"{path} is not a quantized tensor file (bad magic)")
        d, k, block_size = struct.unpack_from("<QQI", raw, len(MAGIC))
        if block_size < 1:
            raise FormatError(f"{path}: block_size {block_size} invalid")
        n = d * k
        n_blocks = -(-n // block_size)
        n_groups = -(-n_blocks // C2_GROUP_SIZE)
        n_packed = (n + 1) // 2
        expected = head + n_packed + n_blocks + 8 * n_groups
        if len(raw) != expected:
            raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
        packed = np.frombuffer(raw, dtype=np.uint8, count=n_packed, offset=head)
        codes = np.empty(n, dtype=np.uint8)
        codes[0::2] = packed & 0x0F
        codes[1::2] = packed[: n // 2] >> 4
        c2 = np.frombuffer(raw, dtype=np.uint8, count=n_blocks, offset=head + n_packed)
        c1 = np.frombuffer(
            raw, dtype="<f4", count=2 * n_groups, offset=head + n_packed + n_blocks
        ).reshape(n_groups, 2)
        return cls((d, k), block_size, codes, c2.copy(), c1.astype(np.float32))


def _affine_quantize_c2(c2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """8-bit affine storage of absmax constants per group of 256 blocks.

    c1 holds (lo, hi) per group; the byte grid spans them with 255 steps.
    Group min and max land on bytes 0 and 255, which c2_values maps back
    to lo and hi exactly.
    """
    n_blocks = c2.shape[0]
    n_groups = -(-n_blocks // C2_GROUP_SIZE)
    c2_bytes = np.zeros(n_blocks, dtype=np.uint8)
    c1 = np.zeros((n_groups, 2), dtype=np.float32)
    for g in range(n_groups):
        chunk = c2[g * C2_GROUP_SIZE : (g + 1) * C2_GROUP_SIZE]
        lo = np.float32(chunk.min())
        hi = np.float32(chunk.max())
        c1[g] = (lo, hi)
        scale = np.float32((hi - lo) / np.float32(255.0))
        if scale > 0:
            c2_bytes[g * C2_GROUP_SIZE : (g + 1) * C2_GROUP_SIZE] = np.clip(
                np.round((chunk - lo) / scale), 0, 255
            ).astype(np.uint8)
    return c2_bytes, c1


def quantize(W: np.ndarray, block_size: int = DEFAULT_BLOCK_SIZE) -> QuantizedBlockTensor:
    """Blockwise nearest-level quantization against per-block absmax."""
    W = np.asarray(W, dtype=np.float32)
    if W.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise InputError("matrix contains NaN or Inf")
    if block_size < 1:
        raise ConfigError(f"block_size must be >= 1, got {block_size}")

    levels = _levels()
    mids = (levels[1:] + levels[:-1]) / 2.0

    flat = W.ravel()
    n = flat.size
    n_blocks = -(-n // block_size)
    padded = np.zeros(n_blocks * block_size, dtype=np.float32)
    padded[:n] = flat
    blocks = padded.reshape(n_blocks, block_size)

    c2 = np.abs(blocks).max(axis=1)
    c2_bytes, c1 = _affine_quantize_c2(c2)
    tensor = QuantizedBlockTensor(W.shape, block_size, np.zeros(n, dtype=np.uint8), c2_bytes, c1)
    c2_stored = tensor.c2_values()

    # Codes are assigned against the stored constants, so the element-wise
    # reconstruction error is bounded by c2_stored * half the widest level
    # gap regardless of c2 storage loss.
    safe = np.where(c2_stored > 0, c2_stored, np.float32(1.0))
    ratios = blocks.astype(np.float64) / safe[:, None].astype(np.float64)
    codes = np.searchsorted(mids, ratios, side="left").astype(np.uint8)
    codes[c2_stored == 0] = np.searchsorted(levels, 0.0)
    return QuantizedBlockTensor(W.shape, block_size, codes.ravel()[:n].copy(), c2_bytes, c1)


def double_dequant(q: QuantizedBlockTensor) -> np.ndarray:
    """Recover the dense matrix: c2 from c1, then level[code] * c2."""
    if np.any(q.codes >= 16):
        raise FormatError("corrupted tensor: code index >= 16")
    levels32 = _levels().astype(np.float32)
    n = q.shape[0] * q.shape[1]
    values = levels32[q.codes]
    block_of = np.arange(n) // q.block_size
    values = values * q.c2_values()[block_of]
    return values.reshape(q.shape)


@dataclass(frozen=True)
class LoraPair:
    """Low-rank adapter factors: L1 (d x r), L2 (r x k), scaled alpha/r."""

    L1: np.ndarray
    L2: np.ndarray
    rank: int
    alpha: float
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "L1", np.asarray(self.L1, dtype=np.float32))
        object.__setattr__(self, "L2", np.asarray(self.L2, dtype=np.float32))
        if self.L1.ndim != 2 or self.L2.ndim != 2:
            raise ShapeError("adapter factors must be 2-D")
        if self.L1.shape[1] != self.rank or self.L2.shape[0] != self.rank:
            raise ShapeError(
                f"rank {self.rank} inconsistent with factor shapes "
                f"{self.L1.shape} and {self.L2.shape}"
            )

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta(self) -> np.ndarray:
        """The dense update this adapter contributes: (alpha/r) L1 L2."""
        return (self.L1 @ self.L2) * np.float32(self.scaling)


def zero_lora(d: int, k: int, rank: int, alpha: float) -> LoraPair:
    """Freshly initialized adapter: L1 = 0 so the update is exactly zero."""
    return LoraPair(np.zeros((d, rank), np.float32), np.zeros((rank, k), np.float32), rank, alpha)


def lora_forward(W, lora: LoraPair, X: np.ndarray) -> np.ndarray:
    """Y = W X + (alpha/r) L1 (L2 X); W may be dense or quantized."""
    if isinstance(W, QuantizedBlockTensor):
        W = double_dequant(W)
    W = np.asarray(W, dtype=np.float32)
    X = np.asarray(X, dtype=np.float32)
    if W.ndim != 2 or X.ndim != 2 or W.shape[1] != X.shape[0]:
        raise ShapeError(f"cannot multiply {W.shape} by {X.shape}")
    if lora.L1.shape[0] != W.shape[0] or lora.L2.shape[1] != W.shape[1]:
        raise ShapeError(
            f"adapter shapes {lora.L1.shape}/{lora.L2.shape} do not match weight {W.shape}"
        )
    return W @ X + np.float32(lora.scaling) * (lora.L1 @ (lora.L2 @ X))


@dataclass(frozen=True)
class TensorSpec:
    """One weight tensor in an architecture description."""

    name: str
    shape: tuple[int, ...]
    quantized: bool = False  # stored 4-bit packed: two elements per byte
    tied: bool = False       # shares storage with another tensor; counts 0

    def storage_elements(self) -> int:
        if self.tied:
            return 0
        n = 1
        for s in self.shape:
            n *= s
        return (n + 1) // 2 if self.quantized else n


@dataclass(frozen=True)
class LoraSpec:
    """Which tensors get adapters, at what rank."""

    targets: tuple[str, ...]
    rank: int = 64
    alpha: float = 16.0
    dropout: float = 0.0


def count_parameters(config: list[TensorSpec], spec: LoraSpec) -> tuple[int, int]:
    """Return (trainable adapter params, total params incl. frozen base).

    Frozen 4-bit tensors count as their packed storage elements. Adapter
    params for a d x k target are r(d + k); only 2-D targets are valid.
    """
    by_name = {t.name: t for t in config}
    trainable = 0
    for name in spec.targets:
        t = by_name.get(name)
        if t is None:
            raise ConfigError(f"adapter target {name!r} not in model config")
        if len(t.shape) != 2:
            raise ConfigError(f"adapter target {name!r} is not a matrix: shape {t.shape}")
        trainable += spec.rank * (t.shape[0] + t.shape[1])
    base = sum(t.storage_elements() for t in config)
    return trainable, base + trainable


def trainable_fraction(config: list[TensorSpec], spec: LoraSpec) -> float:
    trainable, total = count_parameters(config, spec)
    return trainable / total


def llama7b_shapes(
    vocab_size: int,
    tied_head: bool,
    layers: int = 32,
    dim: int = 4096,
    ffn: int = 11008,
    quantized_linears: bool = True,
) -> list[TensorSpec]:
    """Weight tensors of a 7B-class decoder with a resized vocabulary."""
    tensors = [TensorSpec("embed", (vocab_size, dim))]
    for i in range(layers):
        for proj in ("q", "k", "v", "o"):
            tensors.append(TensorSpec(f"layers.{i}.attn.{proj}", (dim, dim), quantized_linears))
        tensors.append(TensorSpec(f"layers.{i}.mlp.gate", (ffn, dim), quantized_linears))
        tensors.append(TensorSpec(f"layers.{i}.mlp.up", (ffn, dim), quantized_linears))
        tensors.append(TensorSpec(f"layers.{i}.mlp.down", (dim, ffn), quantized_linears))
        tensors.append(TensorSpec(f"layers.{i}.attn_norm", (dim,)))
        tensors.append(TensorSpec(f"layers.{i}.mlp_norm", (dim,)))
    tensors.append(TensorSpec("final_norm", (dim,)))
    tensors.append(TensorSpec("head", (vocab_size, dim), tied=tied_head))
    return tensors


def transformer_linear_targets(layers: int = 32) -> list[str]:
    names = []
    for i in range(layers):
        names.extend(f"layers.{i}.attn.{p}" for p in ("q", "k", "v", "o"))
        names.extend(f"layers.{i}.mlp.{p}" for p in ("gate", "up", "down"))
    return names
