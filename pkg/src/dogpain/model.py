"""Two-stream pain classifier: LSTM over poses, ConvLSTM over RGB frames.

Each stream ends in a temporal self-attention layer; the two context vectors
are concatenated (pose first) and mapped by one dense layer to a logit.

LSTM gate blocks are stacked in the order input, forget, output, candidate.
ConvLSTM gate blocks are stacked forget, input, candidate, output, and its
peephole tensor holds the forget, input and output peepholes in that order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

import dogpain.numerics as nx
from dogpain.errors import ConfigurationError, ContractError, DimensionError
from dogpain.numerics import BatchNormState, Tensor

POSE_DIM = 34
CLIP_LEN = 8


@dataclass(frozen=True)
class TwoStreamConfig:
    hidden: int = 64
    lstm_layers: int = 4
    channels: tuple[int, ...] = (8, 16, 32, 64)
    kernel: int = 3
    image_size: int = 64
    attention_hidden: int = 32
    pose_dim: int = POSE_DIM
    clip_len: int = CLIP_LEN
    standard_lstm_output: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.hidden < 1 or self.lstm_layers < 1 or not self.channels or min(self.channels) < 1:
            raise ConfigurationError("hidden, lstm_layers and channels must be positive")
        if self.kernel % 2 == 0:
            raise ConfigurationError(f"kernel extent must be odd, got {self.kernel}")
        if self.image_size < 1 or self.attention_hidden < 1:
            raise ConfigurationError("image_size and attention_hidden must be positive")

    @property
    def name(self) -> str:
        return f"C-LSTM+LSTM{self.hidden}"

    def spatial_sizes(self) -> list[int]:
        """Side length at which each ConvLSTM layer runs (pooling halves, rounding up)."""
        sizes, s = [], self.image_size
        for _ in self.channels:
            sizes.append(s)
            s = -(-s // 2)
        return sizes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TwoStreamConfig":
        return cls(**{**d, "channels": tuple(d["channels"])})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ------------------------------------------------------------- parameters


@dataclass
class LstmCellParams:
    W: Tensor  # 4H×H  recurrent
    I: Tensor  # 4H×in input projection
    b: Tensor  # 4H

    @property
    def hidden(self) -> int:
        return self.W.shape[1]


@dataclass
class ConvLstmCellParams:
    W: Tensor  # 4C×Cin×k×k input-to-state
    U: Tensor  # 4C×C×k×k   state-to-state
    V: Tensor  # 3×C×h×w    peepholes
    b: Tensor  # 4C

    @property
    def channels(self) -> int:
        return self.U.shape[1]


@dataclass
class AttentionParams:
    Wq: Tensor  # A×d, query projection
    Wa: Tensor  # A×d, annotation projection
    b: Tensor  # A
    v: Tensor  # A, score vector


def parameter_shapes(cfg: TwoStreamConfig) -> dict[str, tuple[tuple[int, ...], int | None]]:
    """Name -> (shape, fan-in for uniform init or None for fixed init), in init order."""
    shapes: dict[str, tuple[tuple[int, ...], int | None]] = {}
    h, a, k = cfg.hidden, cfg.attention_hidden, cfg.kernel
    d_in = cfg.pose_dim
    for layer in range(cfg.lstm_layers):
        shapes[f"pose.l{layer}.W"] = ((4 * h, h), h)
        shapes[f"pose.l{layer}.I"] = ((4 * h, d_in), d_in)
        shapes[f"pose.l{layer}.b"] = ((4 * h,), None)
        d_in = h
    c_in = 3
    for layer, (c, s) in enumerate(zip(cfg.channels, cfg.spatial_sizes())):
        shapes[f"rgb.l{layer}.W"] = ((4 * c, c_in, k, k), c_in * k * k)
        shapes[f"rgb.l{layer}.U"] = ((4 * c, c, k, k), c * k * k)
        shapes[f"rgb.l{layer}.V"] = ((3, c, s, s), None)
        shapes[f"rgb.l{layer}.b"] = ((4 * c,), None)
        shapes[f"rgb.bn{layer}.gamma"] = ((c,), None)
        shapes[f"rgb.bn{layer}.beta"] = ((c,), None)
        c_in = c
    for stream, d in (("pose", h), ("rgb", cfg.channels[-1])):
        shapes[f"{stream}.att.Wq"] = ((a, d), d)
        shapes[f"{stream}.att.Wa"] = ((a, d), d)
        shapes[f"{stream}.att.b"] = ((a,), None)
        shapes[f"{stream}.att.v"] = ((a,), a)
    fused = h + cfg.channels[-1]
    shapes["head.w"] = ((1, fused), fused)
    shapes["head.b"] = ((1,), None)
    return shapes


def lstm_cell_param_count(input_dim: int, hidden: int) -> int:
    """Scalars in one LSTM cell: four gates of ``H×H`` recurrent, ``H×in`` input and ``H`` bias."""
    return 4 * (hidden * hidden + hidden * input_dim + hidden)


def count_params(cfg: TwoStreamConfig) -> int:
    """Exact number of learnable scalars (batch-norm running statistics excluded)."""
    return int(sum(np.prod(shape) for shape, _ in parameter_shapes(cfg).values()))


def _fixed_init(name: str, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.zeros(shape)
    if name.endswith("gamma"):
        arr[:] = 1.0
    elif name.startswith("pose.l") and name.endswith(".b"):
        h = shape[0] // 4
        arr[h : 2 * h] = 1.0  # forget block
    elif name.startswith("rgb.l") and name.endswith(".b"):
        c = shape[0] // 4
        arr[:c] = 1.0  # forget block
    return arr


@dataclass
class TwoStreamParams:
    config: TwoStreamConfig
    tensors: dict[str, Tensor]
    bn: dict[str, BatchNormState] = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def init(cls, cfg: TwoStreamConfig, seed: int = 0) -> "TwoStreamParams":
        """Uniform ±1/sqrt(fan-in) weights, forget-gate biases 1, other biases and peepholes 0."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, (shape, fan_in) in parameter_shapes(cfg).items():
            if fan_in is None:
                data = _fixed_init(name, shape)
            else:
                bound = 1.0 / np.sqrt(fan_in)
                data = rng.uniform(-bound, bound, size=shape)
            tensors[name] = Tensor(data, requires_grad=True)
        bn = {f"rgb.bn{i}": BatchNormState(c) for i, c in enumerate(cfg.channels)}
        return cls(cfg, tensors, bn, seed)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def lstm(self, layer: int) -> LstmCellParams:
        p = f"pose.l{layer}."
        return LstmCellParams(self[p + "W"], self[p + "I"], self[p + "b"])

    def convlstm(self, layer: int) -> ConvLstmCellParams:
        p = f"rgb.l{layer}."
        return ConvLstmCellParams(self[p + "W"], self[p + "U"], self[p + "V"], self[p + "b"])

    def attention(self, stream: str) -> AttentionParams:
        p = f"{stream}.att."
        return AttentionParams(self[p + "Wq"], self[p + "Wa"], self[p + "b"], self[p + "v"])

    def copy(self) -> "TwoStreamParams":
        tensors = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.tensors.items()}
        bn = {
            k: BatchNormState(s.channels, s.running_mean.copy(), s.running_var.copy(), s.momentum, s.eps, s.updates)
            for k, s in self.bn.items()
        }
        return TwoStreamParams(self.config, tensors, bn, self.seed)


# -------------------------------------------------------------------- cells


def _split(x: Tensor, parts: int, axis: int) -> list[Tensor]:
    n = x.shape[axis] // parts
    out = []
    for i in range(parts):
        index = [slice(None)] * x.ndim
        index[axis] = slice(i * n, (i + 1) * n)
        out.append(x[tuple(index)])
    return out


def lstm_step(p: LstmCellParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor, standard_output: bool = False):
    """One LSTM step on ``N×in`` (or unbatched ``in``) inputs; returns ``(h_t, c_t)``.

    The hidden state is ``tanh(o ⊙ c)`` unless ``standard_output`` selects
    ``o ⊙ tanh(c)``.
    """
    hdim = p.hidden
    if x_t.shape[-1] != p.I.shape[1] or h_prev.shape[-1] != hdim or c_prev.shape != h_prev.shape:
        raise DimensionError(
            f"lstm_step: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} do not fit input {p.I.shape[1]}, hidden {hdim}"
        )
    single = x_t.ndim == 1
    if single:
        x_t, h_prev, c_prev = (nx.reshape(t, (1, -1)) for t in (x_t, h_prev, c_prev))
    z = nx.matmul(x_t, nx.transpose(p.I, (1, 0))) + nx.matmul(h_prev, nx.transpose(p.W, (1, 0)))
    z = nx.bias_add(z, p.b, axis=-1)
    zi, zf, zo, zc = _split(z, 4, axis=-1)
    i, f, o = nx.sigmoid(zi), nx.sigmoid(zf), nx.sigmoid(zo)
    c = f * c_prev + i * nx.tanh(zc)
    h = o * nx.tanh(c) if standard_output else nx.tanh(o * c)
    if single:
        h, c = nx.reshape(h, (hdim,)), nx.reshape(c, (hdim,))
    return h, c


def convlstm_step(p: ConvLstmCellParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor):
    """One ConvLSTM step with peepholes on ``N×C×h×w`` maps; returns ``(h_t, c_t)``."""
    single = x_t.ndim == 3
    if single:
        x_t, h_prev, c_prev = (nx.reshape(t, (1, *t.shape)) for t in (x_t, h_prev, c_prev))
    c_dim = p.channels
    if (
        x_t.ndim != 4
        or x_t.shape[2:] != h_prev.shape[2:]
        or h_prev.shape != c_prev.shape
        or x_t.shape[1] != p.W.shape[1]
        or h_prev.shape[1] != c_dim
        or h_prev.shape[2:] != p.V.shape[2:]
    ):
        raise DimensionError(
            f"convlstm_step: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} do not fit "
            f"kernels {p.W.shape} and peepholes {p.V.shape}"
        )
    n = x_t.shape[0]
    kern = nx.concat([p.W, p.U], axis=1)
    z = nx.bias_add(nx.conv2d(nx.concat([x_t, h_prev], axis=1), kern), p.b, axis=1)
    zf, zi, zc, zo = _split(z, 4, axis=1)
    vf, vi, vo = (nx.expand(nx.getitem(p.V, k), (n, *p.V.shape[1:])) for k in range(3))
    f = nx.sigmoid(zf + vf * c_prev)
    i = nx.sigmoid(zi + vi * c_prev)
    c = f * c_prev + i * nx.tanh(zc)
    o = nx.sigmoid(zo + vo * c)
    h = o * nx.tanh(c)
    if single:
        h, c = nx.reshape(h, h.shape[1:]), nx.reshape(c, c.shape[1:])
    return h, c


def time_attention(a: AttentionParams, annotations: Tensor) -> tuple[Tensor, Tensor]:
    """Self-attention pooling over time.

    The last annotation is the query. Each annotation ``b_j`` is scored by
    ``e_j = v · tanh(Wq q + Wa b_j + b)``, weighted by ``softmax(e)`` and
    summed. Accepts ``T×d`` or ``N×T×d``; returns ``(context, weights)``.
    """
    single = annotations.ndim == 2
    if single:
        annotations = nx.reshape(annotations, (1, *annotations.shape))
    if annotations.ndim != 3:
        raise DimensionError(f"time_attention: expected T×d or N×T×d, got {annotations.shape}")
    n, t, d = annotations.shape
    if t == 0:
        raise ContractError("time_attention: empty sequence")
    if a.Wa.shape[1] != d:
        raise DimensionError(f"time_attention: annotations of width {d} do not fit {a.Wa.shape}")
    width = a.Wa.shape[0]
    query = annotations[:, t - 1]
    proj_q = nx.matmul(query, nx.transpose(a.Wq, (1, 0)))  # N×A
    proj_b = nx.reshape(nx.matmul(nx.reshape(annotations, (n * t, d)), nx.transpose(a.Wa, (1, 0))), (n, t, width))
    pre = proj_b + nx.transpose(nx.expand(proj_q, (t, n, width)), (1, 0, 2))
    hidden = nx.tanh(nx.bias_add(pre, a.b, axis=-1))
    scores = nx.reshape(nx.matmul(nx.reshape(hidden, (n * t, width)), nx.reshape(a.v, (width, 1))), (n, t))
    alpha = nx.softmax(scores, axis=-1)
    context = nx.reshape(nx.matmul(nx.reshape(alpha, (n, 1, t)), annotations), (n, d))
    if single:
        return nx.reshape(context, (d,)), nx.reshape(alpha, (t,))
    return context, alpha


def fuse_concat(x_a: Tensor, x_b: Tensor) -> Tensor:
    """Concatenate the pose feature vector (first) and the RGB feature vector along the last axis."""
    if x_a.ndim != x_b.ndim or x_a.ndim not in (1, 2):
        raise DimensionError(f"fuse_concat: expected matching 1-D or N×C inputs, got {x_a.shape} and {x_b.shape}")
    if x_a.shape[-1] < 1 or x_b.shape[-1] < 1:
        raise ContractError("fuse_concat: both feature vectors must be non-empty")
    return nx.concat([x_a, x_b], axis=-1)


# ------------------------------------------------------------------ network


@dataclass
class ForwardResult:
    logit: Tensor  # N
    prob: Tensor  # N
    pose_alpha: Tensor  # N×T
    rgb_alpha: Tensor  # N×T
    last_hidden: list[Tensor]  # T tensors N×C×h×w from the final ConvLSTM layer


def pose_stream(params: TwoStreamParams, poses: Tensor) -> tuple[Tensor, Tensor]:
    cfg = params.config
    n, t, _ = poses.shape
    seq = [poses[:, k] for k in range(t)]
    zeros = Tensor(np.zeros((n, cfg.hidden)))
    for layer in range(cfg.lstm_layers):
        cell = params.lstm(layer)
        h, c = zeros, zeros
        out = []
        for x in seq:
            h, c = lstm_step(cell, x, h, c, cfg.standard_lstm_output)
            out.append(h)
        seq = out
    return time_attention(params.attention("pose"), nx.stack(seq, axis=1))


def rgb_stream(params: TwoStreamParams, frames: Tensor, training: bool, keep_hidden: bool = False):
    cfg = params.config
    n, t = frames.shape[:2]
    seq = [frames[:, k] for k in range(t)]
    hidden_last: list[Tensor] = []
    mode = "train" if training else "infer"
    n_layers = len(cfg.channels)
    for layer, ch in enumerate(cfg.channels):
        cell = params.convlstm(layer)
        s = seq[0].shape[-1]
        zeros = Tensor(np.zeros((n, ch, s, s)))
        h, c = zeros, zeros
        pooled = []
        for x in seq:
            h, c = convlstm_step(cell, x, h, c)
            if keep_hidden and layer == n_layers - 1:
                hidden_last.append(h.retain_grad())
            pooled.append(nx.maxpool2d(h))
        stacked = nx.stack(pooled, axis=1)  # N×T×C×h×w
        shape = stacked.shape
        flat = nx.reshape(stacked, (n * t, *shape[2:]))
        normed = nx.batchnorm(
            flat, params[f"rgb.bn{layer}.gamma"], params[f"rgb.bn{layer}.beta"], params.bn[f"rgb.bn{layer}"], mode
        )
        normed = nx.reshape(normed, shape)
        seq = [normed[:, k] for k in range(t)]
    features = nx.stack([nx.mean(x, axis=(2, 3)) for x in seq], axis=1)  # N×T×C
    context, alpha = time_attention(params.attention("rgb"), features)
    return context, alpha, hidden_last


def check_inputs(cfg: TwoStreamConfig, frames: np.ndarray, poses: np.ndarray) -> None:
    s = cfg.image_size
    if frames.ndim != 5 or frames.shape[1:] != (cfg.clip_len, 3, s, s):
        raise DimensionError(f"RGB stream: expected N×{cfg.clip_len}×3×{s}×{s} frames, got {frames.shape}")
    if poses.ndim != 3 or poses.shape[1:] != (cfg.clip_len, cfg.pose_dim):
        raise DimensionError(f"pose stream: expected N×{cfg.clip_len}×{cfg.pose_dim} poses, got {poses.shape}")
    if frames.shape[0] != poses.shape[0]:
        raise DimensionError(f"batch mismatch: {frames.shape[0]} frame clips vs {poses.shape[0]} pose clips")


def forward_batch(
    params: TwoStreamParams,
    frames,
    poses,
    training: bool = False,
    keep_hidden: bool = False,
) -> ForwardResult:
    """Run ``N`` clips through both streams. ``frames`` is ``N×8×3×H×W``, ``poses`` ``N×8×34``."""
    fr = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames))
    po = poses if isinstance(poses, Tensor) else Tensor(np.asarray(poses))
    check_inputs(params.config, fr.data, po.data)
    pose_ctx, pose_alpha = pose_stream(params, po)
    rgb_ctx, rgb_alpha, hidden = rgb_stream(params, fr, training, keep_hidden)
    fused = fuse_concat(pose_ctx, rgb_ctx)
    logit = nx.matmul(fused, nx.transpose(params["head.w"], (1, 0)))
    logit = nx.reshape(nx.bias_add(logit, params["head.b"], axis=-1), (fused.shape[0],))
    return ForwardResult(logit, nx.sigmoid(logit), pose_alpha, rgb_alpha, hidden)


def forward(params: TwoStreamParams, clip) -> float:
    """Pain probability of a single clip in inference mode."""
    res = forward_batch(params, clip.frames[None], clip.poses[None], training=False)
    return float(res.prob.data[0])


def predict_proba(params: TwoStreamParams, clips: Sequence, batch_size: int = 32) -> np.ndarray:
    """Inference-mode probabilities for a list of clips, in order."""
    out = []
    for i in range(0, len(clips), batch_size):
        chunk = clips[i : i + batch_size]
        res = forward_batch(
            params, np.stack([c.frames for c in chunk]), np.stack([c.poses for c in chunk]), training=False
        )
        out.append(np.asarray(res.prob.data, dtype=np.float64))
    return np.concatenate(out) if out else np.zeros(0)
