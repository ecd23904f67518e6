"""Network building blocks: stacked bidirectional LSTM with a sigmoid
attention head, and a small convolutional classifier.

Parameter naming scheme (used by the optimizer and checkpoints):
    rnn.l{layer}.{fw|bw}.wx   (in_dim, 4*hidden)   gate order i, f, g, o
    rnn.l{layer}.{fw|bw}.wh   (hidden, 4*hidden)
    rnn.l{layer}.{fw|bw}.b    (4*hidden,)          forget-gate bias starts at 1
    head.w (feat, 1), head.b (1,)
    cnn.conv{k}.w (out_ch, in_ch, k, k), cnn.conv{k}.b (out_ch,)
    cnn.fc.w (feat, classes), cnn.fc.b (classes,)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidConfigError, LabelOutOfRangeError, ShapeMismatchError
from ..geometry import OffsetSketch
from . import autodiff as ad
from .autodiff import Tape, Tensor


@dataclass(frozen=True)
class RnnConfig:
    input_size: int = 3
    hidden_size: int = 512
    num_layers: int = 2
    bidirectional: bool = True
    dropout_prob: float = 0.5

    def __post_init__(self):
        if self.hidden_size < 1 or self.num_layers < 1:
            raise InvalidConfigError("hidden_size and num_layers must be >= 1")
        if not (0.0 <= self.dropout_prob < 1.0):
            raise InvalidConfigError("dropout_prob must lie in [0, 1)")

    @property
    def feature_size(self) -> int:
        return self.hidden_size * (2 if self.bidirectional else 1)


@dataclass(frozen=True)
class CnnConfig:
    stages: tuple[tuple[int, int, int], ...] = ((3, 16, 2), (3, 32, 2), (3, 64, 2))
    num_classes: int = 6

    def __post_init__(self):
        for k, ch, pool in self.stages:
            if k % 2 != 1 or k < 1:
                raise InvalidConfigError("conv kernels must be odd")
            if ch < 1 or pool < 1:
                raise InvalidConfigError("channel counts and pooling factors must be >= 1")
        if self.num_classes < 2:
            raise InvalidConfigError("need at least two classes")


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.normal(size=(n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def init_rnn_params(rng: np.random.Generator, cfg: RnnConfig) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    H = cfg.hidden_size
    directions = ("fw", "bw") if cfg.bidirectional else ("fw",)
    for layer in range(cfg.num_layers):
        in_dim = cfg.input_size if layer == 0 else cfg.feature_size
        bound = 1.0 / np.sqrt(in_dim)
        for d in directions:
            wx = rng.uniform(-bound, bound, size=(in_dim, 4 * H))
            wh = np.concatenate([_orthogonal(rng, H) for _ in range(4)], axis=1)
            b = np.zeros(4 * H)
            b[H : 2 * H] = 1.0
            params[f"rnn.l{layer}.{d}.wx"] = ad.parameter(wx)
            params[f"rnn.l{layer}.{d}.wh"] = ad.parameter(wh)
            params[f"rnn.l{layer}.{d}.b"] = ad.parameter(b)
    feat = cfg.feature_size
    params["head.w"] = ad.parameter(rng.uniform(-1.0 / np.sqrt(feat), 1.0 / np.sqrt(feat), size=(feat, 1)))
    params["head.b"] = ad.parameter(np.zeros(1))
    return params


def init_cnn_params(rng: np.random.Generator, cfg: CnnConfig, in_channels: int = 1) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    ch_in = in_channels
    for s, (k, ch, _pool) in enumerate(cfg.stages):
        fan_in = ch_in * k * k
        bound = np.sqrt(6.0 / fan_in)
        params[f"cnn.conv{s}.w"] = ad.parameter(rng.uniform(-bound, bound, size=(ch, ch_in, k, k)))
        params[f"cnn.conv{s}.b"] = ad.parameter(np.zeros(ch))
        ch_in = ch
    bound = 1.0 / np.sqrt(ch_in)
    params["cnn.fc.w"] = ad.parameter(rng.uniform(-bound, bound, size=(ch_in, cfg.num_classes)))
    params["cnn.fc.b"] = ad.parameter(np.zeros(cfg.num_classes))
    return params


def _lstm_cell(tape, x, h, c, wx, wh, b):
    z = ad.add(tape, ad.add(tape, ad.matmul(tape, x, wx), ad.matmul(tape, h, wh)), b)
    zi, zf, zg, zo = ad.split(tape, z, 4, axis=1)
    i = ad.sigmoid(tape, zi)
    f = ad.sigmoid(tape, zf)
    g = ad.tanh(tape, zg)
    o = ad.sigmoid(tape, zo)
    c2 = ad.add(tape, ad.mul(tape, f, c), ad.mul(tape, i, g))
    h2 = ad.mul(tape, o, ad.tanh(tape, c2))
    return h2, c2


def _run_direction(tape, steps: list[Tensor], wx, wh, b, batch: int, hidden: int) -> list[Tensor]:
    h = ad.constant(np.zeros((batch, hidden)))
    c = ad.constant(np.zeros((batch, hidden)))
    outs = []
    for x in steps:
        h, c = _lstm_cell(tape, x, h, c, wx, wh, b)
        outs.append(h)
    return outs


def _reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """Per-item time reversal map: index t -> n_b-1-t on the real prefix,
    identity on padding, so padded steps never leak into real ones."""
    B = lengths.shape[0]
    idx = np.tile(np.arange(T), (B, 1))
    for bi, n in enumerate(lengths):
        idx[bi, :n] = np.arange(n - 1, -1, -1)
    return idx


def rnn_attention_batch(
    tape: Tape,
    inputs: np.ndarray,
    lengths: np.ndarray,
    params: dict[str, Tensor],
    cfg: RnnConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Batched attention head over padded (B, T, input_size) sequences.

    Returns a (B, T) tensor of attentions in (0, 1); entries past each
    item's length are forced to zero. In train mode dropout runs between
    LSTM layers (rng required).
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    B, T, D = inputs.shape
    if D != cfg.input_size:
        raise ShapeMismatchError(f"input feature dim {D} != configured {cfg.input_size}")
    lengths = np.asarray(lengths, dtype=np.int64)
    rev_idx = _reverse_index(lengths, T)
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)

    fwd_steps = [ad.constant(inputs[:, t, :]) for t in range(T)]
    rev_inputs = np.take_along_axis(inputs, rev_idx[:, :, None], axis=1)
    bwd_steps = [ad.constant(rev_inputs[:, t, :]) for t in range(T)]

    H = cfg.hidden_size
    layer_out: Tensor | None = None
    for layer in range(cfg.num_layers):
        hf = _run_direction(
            tape, fwd_steps,
            params[f"rnn.l{layer}.fw.wx"], params[f"rnn.l{layer}.fw.wh"], params[f"rnn.l{layer}.fw.b"],
            B, H,
        )
        Hf = ad.stack_steps(tape, hf)
        if cfg.bidirectional:
            hb = _run_direction(
                tape, bwd_steps,
                params[f"rnn.l{layer}.bw.wx"], params[f"rnn.l{layer}.bw.wh"], params[f"rnn.l{layer}.bw.b"],
                B, H,
            )
            Hb = ad.take_time(tape, ad.stack_steps(tape, hb), rev_idx)
            layer_out = ad.concat(tape, [Hf, Hb], axis=2)
        else:
            layer_out = Hf
        if layer < cfg.num_layers - 1:
            if mode == "train" and cfg.dropout_prob > 0.0:
                if rng is None:
                    raise ValueError("train mode needs an rng for dropout")
                layer_out = ad.dropout(tape, layer_out, cfg.dropout_prob, rng)
            fwd_steps = [ad.time_slice(tape, layer_out, t) for t in range(T)]
            rev_out = ad.take_time(tape, layer_out, rev_idx)
            bwd_steps = [ad.time_slice(tape, rev_out, t) for t in range(T)]

    feat = cfg.feature_size
    flat = ad.reshape(tape, layer_out, (B * T, feat))
    z = ad.add(tape, ad.matmul(tape, flat, params["head.w"]), params["head.b"])
    attn = ad.reshape(tape, ad.sigmoid(tape, z), (B, T))
    return ad.mul_const(tape, attn, mask)


def rnn_attention_forward(
    offsets: OffsetSketch,
    cfg: RnnConfig,
    params: dict[str, Tensor],
    mode: str = "eval",
    tape: Tape | None = None,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Per-point attention for one sketch; offsets must already be scaled
    to the RNN's input range (dx, dy divided by the canvas width)."""
    tape = tape if tape is not None else Tape()
    inputs = offsets.as_array()[None, :, :]
    lengths = np.array([len(offsets)])
    attn = rnn_attention_batch(tape, inputs, lengths, params, cfg, mode, rng)
    return ad.reshape(tape, attn, (len(offsets),))


def cnn_forward_batch(tape: Tape, images: Tensor, params: dict[str, Tensor], cfg: CnnConfig) -> Tensor:
    """(B, 1, H, W) images -> (B, num_classes) logits."""
    x = images
    for s, (_k, _ch, pool) in enumerate(cfg.stages):
        x = ad.relu(tape, ad.conv2d(tape, x, params[f"cnn.conv{s}.w"], params[f"cnn.conv{s}.b"]))
        x = ad.maxpool2d(tape, x, pool)
    x = ad.global_avg_pool(tape, x)
    return ad.add(tape, ad.matmul(tape, x, params["cnn.fc.w"]), params["cnn.fc.b"])


def cnn_forward(image, cfg: CnnConfig, params: dict[str, Tensor], tape: Tape | None = None) -> Tensor:
    """Single attention map (H, W) or (1, H, W) -> (num_classes,) logits."""
    tape = tape if tape is not None else Tape()
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] != 1:
        raise ShapeMismatchError("cnn_forward expects a single-channel image")
    logits = cnn_forward_batch(tape, ad.constant(arr[None]), params, cfg)
    return ad.reshape(tape, logits, (cfg.num_classes,))


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """Scalar softmax cross entropy, -log softmax(logits)[label]."""
    logits = np.asarray(logits, dtype=np.float64)
    if not (0 <= label < logits.shape[0]):
        raise LabelOutOfRangeError(f"label {label} outside [0, {logits.shape[0]})")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def cross_entropy_grad(logits: np.ndarray, label: int) -> np.ndarray:
    """Gradient of cross_entropy w.r.t. the logits: softmax - one_hot."""
    logits = np.asarray(logits, dtype=np.float64)
    if not (0 <= label < logits.shape[0]):
        raise LabelOutOfRangeError(f"label {label} outside [0, {logits.shape[0]})")
    z = logits - logits.max()
    ez = np.exp(z)
    p = ez / ez.sum()
    p[label] -= 1.0
    return p
