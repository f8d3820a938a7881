"""Feature pipeline and recurrent encoder.

Raw feature sequences are stacked (adjacent frames concatenated) and skipped
(decimated) before entering a multi-layer LSTM, unidirectional or
bidirectional; bidirectional runs concatenate both directions per frame.
A single affine projection, applied once after the final layer with no
nonlinearity, maps to the n-dimensional hidden features consumed downstream.

Feature files: binary with a fixed little-endian header
(magic "ATFB", version, T', d) followed by row-major float32 frames, plus a
line-oriented text alternative (one frame per line) for debugging.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import LstmParams, Tensor, add, concat, init_lstm, lstm_cell, matmul, transpose, uniform_init

FEATURE_MAGIC = b"ATFB"
FEATURE_VERSION = 1


@dataclass
class FeatureSequence:
    """frames: (T', d) real matrix; frame_period in milliseconds."""

    frames: np.ndarray
    frame_period: float = 10.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be (T' >= 1, d), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("non-finite feature values")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class EncoderConfig:
    in_dim: int
    layers: int = 2
    cells_per_dir: int = 64
    bidirectional: bool = False
    stack: int = 1
    skip: int = 1
    proj_dim: int = 64

    def __post_init__(self):
        if self.stack < 1 or self.skip < 1:
            raise ValueError("stack and skip must be >= 1")
        if self.proj_dim < 1:
            raise ValueError("proj_dim must be positive")
        if self.layers < 1:
            raise ValueError("need at least one layer")


def stack_skip_array(x: np.ndarray, stack: int, skip: int) -> np.ndarray:
    """(T', d) -> (ceil(T'/skip), stack*d); output frame t concatenates input
    frames [t*skip, t*skip+stack), zero-padded past the end."""
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"need a nonempty (T', d) input, got {x.shape}")
    Tp, d = x.shape
    T = -(-Tp // skip)
    out = np.zeros((T, stack * d), dtype=x.dtype)
    for t in range(T):
        for j in range(stack):
            src = t * skip + j
            if src < Tp:
                out[t, j * d:(j + 1) * d] = x[src]
    return out


def stack_and_skip(f: FeatureSequence, stack: int, skip: int) -> FeatureSequence:
    out = stack_skip_array(f.frames, stack, skip)
    return FeatureSequence(out, frame_period=f.frame_period * skip)


@dataclass
class _Layer:
    fwd: LstmParams
    bwd: LstmParams | None = None


class Encoder:
    """Stacked LSTM encoder with a final affine projection to proj_dim."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.layers: list[_Layer] = []
        width = cfg.in_dim * cfg.stack
        for _ in range(cfg.layers):
            fwd = init_lstm(rng, width, cfg.cells_per_dir)
            bwd = init_lstm(rng, width, cfg.cells_per_dir) if cfg.bidirectional else None
            self.layers.append(_Layer(fwd, bwd))
            width = cfg.cells_per_dir * (2 if cfg.bidirectional else 1)
        self.w_proj = uniform_init(rng, (cfg.proj_dim, width), width)
        self.b_proj = uniform_init(rng, (cfg.proj_dim,), width)

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            yield from layer.fwd.named(f"enc.layer{i}.fwd")
            if layer.bwd is not None:
                yield from layer.bwd.named(f"enc.layer{i}.bwd")
        yield "enc.proj.w", self.w_proj
        yield "enc.proj.b", self.b_proj

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def _run_direction(self, xs: list[Tensor], params: LstmParams, reverse: bool) -> list[Tensor]:
        B = xs[0].shape[0]
        H = params.hidden
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H)))
        order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
        out: list[Tensor | None] = [None] * len(xs)
        for t in order:
            h, c = lstm_cell(xs[t], h, c, params)
            out[t] = h
        return out  # type: ignore[return-value]

    def pre_projection(self, x: np.ndarray) -> list[Tensor]:
        """Hidden sequence after the top LSTM layer, before projection.
        x: (B, T', d) raw features."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ValueError(f"expected (B, T', d), got {x.shape}")
        if x.shape[2] != self.cfg.in_dim:
            raise ValueError(f"feature dim {x.shape[2]} != configured {self.cfg.in_dim}")
        stacked = np.stack([stack_skip_array(x[b], self.cfg.stack, self.cfg.skip)
                            for b in range(x.shape[0])])
        xs = [Tensor(stacked[:, t]) for t in range(stacked.shape[1])]
        for layer in self.layers:
            fwd = self._run_direction(xs, layer.fwd, reverse=False)
            if layer.bwd is not None:
                bwd = self._run_direction(xs, layer.bwd, reverse=True)
                xs = [concat([f, b], axis=1) for f, b in zip(fwd, bwd)]
            else:
                xs = fwd
        return xs

    def forward_batch(self, x: np.ndarray) -> list[Tensor]:
        """(B, T', d) raw features -> list of T tensors (B, proj_dim)."""
        hidden = self.pre_projection(x)
        wt = transpose(self.w_proj)
        return [add(matmul(h, wt), self.b_proj) for h in hidden]


def encode(f: FeatureSequence, enc: Encoder) -> Tensor:
    """Single sequence -> (T, proj_dim) hidden features."""
    rows = enc.forward_batch(f.frames[None, :, :])
    return concat(rows, axis=0)


# ---------------------------------------------------------------------------
# feature file formats
# ---------------------------------------------------------------------------

def write_features(path, f: FeatureSequence) -> None:
    data = f.frames.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, data.shape[0], data.shape[1]))
        fh.write(data.tobytes(order="C"))


def read_features(path, frame_period: float = 10.0) -> FeatureSequence:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ValueError(f"bad feature file magic {magic!r}")
        version, T, d = struct.unpack("<III", fh.read(12))
        if version != FEATURE_VERSION:
            raise ValueError(f"unsupported feature file version {version}")
        raw = fh.read(4 * T * d)
        if len(raw) != 4 * T * d:
            raise ValueError("truncated feature file")
        frames = np.frombuffer(raw, dtype="<f4").reshape(T, d)
    return FeatureSequence(frames.astype(np.float64), frame_period=frame_period)


def write_features_text(path, f: FeatureSequence) -> None:
    with open(path, "w") as fh:
        for row in f.frames:
            fh.write(" ".join(f"{v:.9g}" for v in row) + "\n")


def read_features_text(path, frame_period: float = 10.0) -> FeatureSequence:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split()])
    if not rows:
        raise ValueError("empty feature text file")
    return FeatureSequence(np.asarray(rows), frame_period=frame_period)
