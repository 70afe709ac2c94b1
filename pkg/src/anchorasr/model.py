"""Baseline, Multi-source Attention and Mask-based encoder-decoder models.

All three variants share the convolutional + BiLSTM encoder, Bahdanau
attention and the LSTM decoder. The anchor variants add an S-Encoder that
maps anchor frames to a pooled vector and body frames to per-frame vectors;
their dot product either biases the attention energies (``multi_source``) or
gates encoder frames through a sigmoid (``mask_based``).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .corpus import RESERVED, AnchoredUtterance, Vocabulary
from .numerics import tensor as T
from .numerics.functional import conv_stack
from .numerics.tensor import Tensor

VARIANTS = ("baseline", "multi_source", "mask_based")
POOLINGS = ("max_over_frames", "last_state")

Params = dict[str, Tensor]


@dataclass(frozen=True)
class ConvSpec:
    channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (2, 2)
    activation: str = "relu"


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "baseline"
    feat_dim: int = 8
    conv: tuple[ConvSpec, ...] = (ConvSpec(8),)
    encoder_layers: int = 1
    encoder_units: int = 32
    s_conv: tuple[ConvSpec, ...] = (ConvSpec(8),)
    # 0 means a convolution-only S-Encoder
    s_recurrent_units: int = 0
    pooling: str = "max_over_frames"
    attention_dim: int = 32
    decoder_layers: int = 2
    decoder_units: int = 32
    embedding_dim: int = 8
    graphemes: str = "abcdefghij "
    init_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "conv", tuple(_as_conv(c) for c in self.conv))
        object.__setattr__(self, "s_conv", tuple(_as_conv(c) for c in self.s_conv))
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.decoder_layers < 1 or self.encoder_layers < 1:
            raise ValueError("encoder and decoder need at least one layer")
        if not self.conv:
            raise ValueError("encoder needs at least one convolution layer")
        if self.uses_anchor:
            if not self.s_conv:
                raise ValueError("S-Encoder needs at least one convolution layer")
            if _time_stride(self.s_conv) != self.time_stride:
                raise ValueError(
                    "S-Encoder and encoder must down-sample time by the same factor"
                )
        Vocabulary(tuple(self.graphemes))

    @property
    def uses_anchor(self) -> bool:
        return self.variant != "baseline"

    @property
    def time_stride(self) -> int:
        return _time_stride(self.conv)

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(tuple(self.graphemes))

    @property
    def vocab_size(self) -> int:
        return len(RESERVED) + len(self.graphemes)

    @property
    def encoder_dim(self) -> int:
        return 2 * self.encoder_units

    @property
    def s_dim(self) -> int:
        if self.s_recurrent_units:
            return 2 * self.s_recurrent_units
        return _conv_out_dim(self.s_conv, self.feat_dim)

    def to_text(self) -> str:
        """Canonical JSON text (sorted keys, no whitespace)."""
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        raw["conv"] = tuple(_as_conv(c) for c in raw["conv"])
        raw["s_conv"] = tuple(_as_conv(c) for c in raw["s_conv"])
        return cls(**raw)

    def with_variant(self, variant: str, **changes) -> "ModelConfig":
        return replace(self, variant=variant, **changes)


def _as_conv(c) -> ConvSpec:
    if isinstance(c, ConvSpec):
        return ConvSpec(int(c.channels), tuple(c.kernel), tuple(c.stride), c.activation)
    base = ConvSpec(int(c["channels"]))
    return ConvSpec(
        base.channels,
        tuple(c.get("kernel", base.kernel)),
        tuple(c.get("stride", base.stride)),
        c.get("activation", base.activation),
    )


def _time_stride(convs: Sequence[ConvSpec]) -> int:
    return math.prod(c.stride[0] for c in convs)


def _conv_out_dim(convs: Sequence[ConvSpec], feat_dim: int) -> int:
    f = feat_dim
    for c in convs:
        f = -(-f // c.stride[1])
    return convs[-1].channels * f


def desk_config(variant: str = "baseline", **changes) -> ModelConfig:
    """Toy-scale topology used for experiments in this repository.

    The anchor-aware variants follow the full-scale S-Encoder choices:
    convolution-only with max pooling for ``multi_source``, convolution plus
    one BiLSTM with last-state pooling for ``mask_based``.
    """
    base = ModelConfig(variant=variant)
    if variant == "mask_based":
        base = replace(base, s_recurrent_units=16, pooling="last_state")
    return replace(base, **changes)


def full_config(variant: str = "baseline") -> ModelConfig:
    """Full-size topology: 64-dim input, 3 conv layers (2x time, 8x frequency
    down-sampling), 3 BiLSTM x 320 encoder, 3 LSTM x 320 decoder, 36 symbols.

    Convolution channel counts, attention and embedding sizes are not
    published; the values here are placeholders of a plausible size.
    """
    convs = (
        ConvSpec(32, (3, 3), (2, 2)),
        ConvSpec(32, (3, 3), (1, 2)),
        ConvSpec(32, (3, 3), (1, 2)),
    )
    # 33 graphemes + 3 reserved symbols = 36
    graphemes = "abcdefghijklmnopqrstuvwxyz '.-_&0"
    cfg = ModelConfig(
        variant=variant,
        feat_dim=64,
        conv=convs,
        encoder_layers=3,
        encoder_units=320,
        s_conv=convs,
        attention_dim=320,
        decoder_layers=3,
        decoder_units=320,
        embedding_dim=64,
        graphemes=graphemes,
    )
    if variant == "mask_based":
        cfg = replace(cfg, s_recurrent_units=320, pooling="last_state")
    return cfg


# -- parameters ------------------------------------------------------------------


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(prefix, convs):
        cin = 1
        for i, c in enumerate(convs):
            shapes[f"{prefix}.conv{i}.w"] = (c.channels, cin) + tuple(c.kernel)
            shapes[f"{prefix}.conv{i}.b"] = (c.channels,)
            cin = c.channels

    def lstm(prefix, d, h):
        shapes[f"{prefix}.W"] = (d, 4 * h)
        shapes[f"{prefix}.U"] = (h, 4 * h)
        shapes[f"{prefix}.b"] = (4 * h,)

    conv("enc", cfg.conv)
    d = _conv_out_dim(cfg.conv, cfg.feat_dim)
    for layer in range(cfg.encoder_layers):
        for direction in ("fw", "bw"):
            lstm(f"enc.lstm{layer}.{direction}", d, cfg.encoder_units)
        d = cfg.encoder_dim
    if cfg.uses_anchor:
        conv("senc", cfg.s_conv)
        if cfg.s_recurrent_units:
            ds = _conv_out_dim(cfg.s_conv, cfg.feat_dim)
            for direction in ("fw", "bw"):
                lstm(f"senc.lstm.{direction}", ds, cfg.s_recurrent_units)
    A, He, Hd = cfg.attention_dim, cfg.encoder_dim, cfg.decoder_units
    shapes["att.Wq"] = (Hd, A)
    shapes["att.Wh"] = (He, A)
    shapes["att.b"] = (A,)
    shapes["att.v"] = (A, 1)
    shapes["dec.emb"] = (cfg.vocab_size, cfg.embedding_dim)
    for layer in range(cfg.decoder_layers):
        d_in = (cfg.embedding_dim if layer == 0 else Hd) + He
        lstm(f"dec.lstm{layer}", d_in, Hd)
    shapes["out.W"] = (Hd, cfg.vocab_size)
    shapes["out.b"] = (cfg.vocab_size,)
    if cfg.uses_anchor:
        shapes["g"] = (1,)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    """Uniform(-init_scale, init_scale) weights from a seeded generator; g = 0."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name == "g":
            value = np.zeros(shape)
        else:
            value = rng.uniform(-cfg.init_scale, cfg.init_scale, size=shape)
        params[name] = Tensor(value, requires_grad=True, name=name)
    return params


def params_from_arrays(arrays: Mapping[str, np.ndarray]) -> Params:
    return {
        k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k)
        for k, v in arrays.items()
    }


def params_to_arrays(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in params.items()}


# -- batching --------------------------------------------------------------------


@dataclass
class Batch:
    ids: list[str]
    body: np.ndarray
    body_lengths: np.ndarray
    anchor: np.ndarray
    anchor_lengths: np.ndarray
    targets: np.ndarray
    target_lengths: np.ndarray
    gold: np.ndarray | None = None
    gold_valid: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.ids)

    def decoder_inputs(self, sos_id: int) -> np.ndarray:
        y = np.empty_like(self.targets)
        y[:, 0] = sos_id
        y[:, 1:] = self.targets[:, :-1]
        return y

    def target_weights(self) -> np.ndarray:
        N = self.targets.shape[1]
        return (np.arange(N)[None, :] < self.target_lengths[:, None]).astype(np.float64)


def _pad_frames(mats: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(m) for m in mats], dtype=np.int64)
    out = np.zeros((len(mats), lengths.max(), mats[0].shape[1]))
    for i, m in enumerate(mats):
        out[i, : len(m)] = m
    return out, lengths


def make_batch(
    utts: Sequence[AnchoredUtterance],
    vocab: Vocabulary,
    time_stride: int = 1,
    targets: Sequence[Sequence[int]] | None = None,
) -> Batch:
    """Pad utterances into one batch; gold masks are down-sampled to encoder rate."""
    from .augment import downsample_mask

    if not utts:
        raise ValueError("empty batch")
    for u in utts:
        if len(u.body) < time_stride or len(u.anchor) < time_stride:
            raise ValueError(
                f"{u.id}: segments must span at least {time_stride} frames (receptive field)"
            )
    body, body_len = _pad_frames([u.body for u in utts])
    anchor, anchor_len = _pad_frames([u.anchor for u in utts])
    if targets is None:
        targets = [vocab.targets(u.transcript) for u in utts]
    tgt_len = np.array([len(t) for t in targets], dtype=np.int64)
    tgt = np.full((len(utts), tgt_len.max()), vocab.pad_id, dtype=np.int64)
    for i, t in enumerate(targets):
        tgt[i, : len(t)] = t
    gold = gold_valid = None
    if any(u.gold_mask is not None for u in utts):
        steps = -(-body.shape[1] // time_stride)
        gold = np.zeros((len(utts), steps))
        gold_valid = np.zeros((len(utts), steps), dtype=bool)
        for i, u in enumerate(utts):
            if u.gold_mask is None:
                continue
            m = downsample_mask(u.gold_mask, time_stride)
            gold[i, : len(m)] = m
            gold_valid[i, : len(m)] = True
    return Batch([u.id for u in utts], body, body_len, anchor, anchor_len, tgt, tgt_len, gold, gold_valid)


# -- encoders --------------------------------------------------------------------


def _frames_mask(lengths: np.ndarray, steps: int) -> np.ndarray:
    return np.arange(steps)[None, :] < lengths[:, None]


def _conv_layers(P: Params, prefix: str, convs: Sequence[ConvSpec]):
    return [
        (P[f"{prefix}.conv{i}.w"], P[f"{prefix}.conv{i}.b"], tuple(c.stride), c.activation)
        for i, c in enumerate(convs)
    ]


def _reverse_index(lengths: np.ndarray, steps: int) -> np.ndarray:
    t = np.arange(steps)[None, :]
    lengths = lengths[:, None]
    return np.where(t < lengths, lengths - 1 - t, t)


def _lstm_layer(x: Tensor, P: Params, prefix: str) -> Tensor:
    B, steps, D = x.shape
    W, U, b = P[f"{prefix}.W"], P[f"{prefix}.U"], P[f"{prefix}.b"]
    xw = T.add(T.matmul(T.reshape(x, (B * steps, D)), W), b)
    return T.lstm_recurrence(T.reshape(xw, (B, steps, W.shape[1])), U)


def bilstm(x: Tensor, lengths: np.ndarray, P: Params, prefix: str) -> tuple[Tensor, Tensor]:
    """Forward and backward passes over the valid prefix of each sequence.

    Returns per-direction outputs (B, T, H) aligned to input time; padded
    frames hold arbitrary values and must be masked by the caller.
    """
    steps = x.shape[1]
    fw = _lstm_layer(x, P, f"{prefix}.fw")
    rev = _reverse_index(lengths, steps)
    bw = T.gather_time(_lstm_layer(T.gather_time(x, rev), P, f"{prefix}.bw"), rev)
    return fw, bw


def _apply_mask(x: Tensor, mask: np.ndarray) -> Tensor:
    return T.mul(x, mask[:, :, None].astype(np.float64))


def encoder_lengths(lengths: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    return -(-np.asarray(lengths) // cfg.time_stride)


def encode_frames(P: Params, cfg: ModelConfig, x: np.ndarray, lengths: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Conv + BiLSTM encoder on padded (B, L, F) frames -> (h, valid mask)."""
    B, L, F = x.shape
    if F != cfg.feat_dim:
        raise ValueError(f"expected {cfg.feat_dim}-dim features, got {F}")
    feats = conv_stack(Tensor(x[:, None]), _conv_layers(P, "enc", cfg.conv), lengths)
    t_len = encoder_lengths(lengths, cfg)
    mask = _frames_mask(t_len, feats.shape[1])
    h = feats
    for layer in range(cfg.encoder_layers):
        fw, bw = bilstm(h, t_len, P, f"enc.lstm{layer}")
        h = _apply_mask(T.concat([fw, bw], axis=-1), mask)
    return h, mask


def encode(x, params: Params, cfg: ModelConfig) -> np.ndarray:
    """Encoder output h (T, 2 * units) for one (L, F) feature sequence."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < cfg.time_stride:
        raise ValueError(f"input of {len(x)} frames is shorter than the receptive field")
    h, _ = encode_frames(params, cfg, x[None], np.array([len(x)]))
    return h.data[0]


def _s_encoder_frames(P: Params, cfg: ModelConfig, x: np.ndarray, lengths: np.ndarray):
    feats = conv_stack(Tensor(x[:, None]), _conv_layers(P, "senc", cfg.s_conv), lengths)
    t_len = encoder_lengths(lengths, cfg)
    mask = _frames_mask(t_len, feats.shape[1])
    if not cfg.s_recurrent_units:
        return feats, None, t_len, mask
    fw, bw = bilstm(feats, t_len, P, "senc.lstm")
    out = _apply_mask(T.concat([fw, bw], axis=-1), mask)
    return out, (fw, bw), t_len, mask


def _pool(cfg: ModelConfig, out: Tensor, dirs, t_len: np.ndarray, mask: np.ndarray) -> Tensor:
    if cfg.pooling == "max_over_frames":
        return T.max_over_time(out, mask)
    last = (t_len - 1)[:, None]
    if dirs is None:
        return T.reshape(T.gather_time(out, last), (out.shape[0], out.shape[2]))
    fw, bw = dirs
    # each direction's final state: forward at the last frame, backward at frame 0
    fw_last = T.reshape(T.gather_time(fw, last), (fw.shape[0], fw.shape[2]))
    bw_last = T.getitem(bw, (slice(None), 0))
    return T.concat([fw_last, bw_last], axis=-1)


def s_encode_batch(P: Params, cfg: ModelConfig, batch: Batch) -> tuple[Tensor, Tensor]:
    """Pooled anchor vector (B, D) and per-frame body vectors (B, T, D)."""
    a_out, a_dirs, a_len, a_mask = _s_encoder_frames(P, cfg, batch.anchor, batch.anchor_lengths)
    w_tilde = _pool(cfg, a_out, a_dirs, a_len, a_mask)
    u, _, _, _ = _s_encoder_frames(P, cfg, batch.body, batch.body_lengths)
    return w_tilde, u


def s_encode(anchor, body, params: Params, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """(w_tilde, u) for one anchor/body pair."""
    utt = AnchoredUtterance("s", anchor, body, "")
    batch = make_batch([utt], cfg.vocab, cfg.time_stride, targets=[[cfg.vocab.eos_id]])
    w_tilde, u = s_encode_batch(params, cfg, batch)
    return w_tilde.data[0], u.data[0]


def similarity(u: Tensor, w_tilde: Tensor) -> Tensor:
    """Unscaled dot product of every u_t with the pooled anchor vector -> (B, T)."""
    B, steps, D = u.shape
    return T.reshape(T.matmul(u, T.reshape(w_tilde, (B, D, 1))), (B, steps))


# -- attention and decoder -------------------------------------------------------


@dataclass
class Encoded:
    h: Tensor
    mask: np.ndarray
    h_proj: Tensor
    extra: Tensor | None = None
    phi: Tensor | None = None
    u: Tensor | None = None
    w_tilde: Tensor | None = None
    raw_h: Tensor | None = None

    def take(self, rows: np.ndarray) -> "Encoded":
        """Row subset/replication without gradient tracking (beam search)."""
        def pick(t):
            return None if t is None else Tensor(t.data[rows])

        return Encoded(
            pick(self.h), self.mask[rows], pick(self.h_proj), pick(self.extra),
            pick(self.phi), pick(self.u), pick(self.w_tilde), pick(self.raw_h),
        )


def encode_batch(P: Params, cfg: ModelConfig, batch: Batch, force_phi: float | None = None) -> Encoded:
    h, mask = encode_frames(P, cfg, batch.body, batch.body_lengths)
    enc = Encoded(h=h, mask=mask, h_proj=None, raw_h=h)  # type: ignore[arg-type]
    if cfg.uses_anchor:
        w_tilde, u = s_encode_batch(P, cfg, batch)
        if u.shape[1] != h.shape[1]:
            raise RuntimeError("S-Encoder frames are not aligned with encoder frames")
        sim = similarity(u, w_tilde)
        enc.u, enc.w_tilde = u, w_tilde
        if cfg.variant == "multi_source":
            enc.phi = sim
            enc.extra = T.mul(P["g"], sim)
        else:
            if force_phi is not None:
                enc.phi = Tensor(np.full(sim.shape, float(force_phi)))
            else:
                enc.phi = T.sigmoid(T.mul(P["g"], sim))
            B, steps = enc.phi.shape
            enc.h = T.mul(h, T.reshape(enc.phi, (B, steps, 1)))
    B, steps, He = enc.h.shape
    enc.h_proj = T.reshape(
        T.add(T.matmul(T.reshape(enc.h, (B * steps, He)), P["att.Wh"]), P["att.b"]),
        (B, steps, cfg.attention_dim),
    )
    return enc


def attention_energy(q, h, params: Params) -> float:
    """Bahdanau energy v . tanh(Wq q + Wh h + b) for single vectors."""
    Wq, Wh = params["att.Wq"].data, params["att.Wh"].data
    b, v = params["att.b"].data, params["att.v"].data[:, 0]
    q, h = np.asarray(q, dtype=np.float64), np.asarray(h, dtype=np.float64)
    if q.shape != (Wq.shape[0],) or h.shape != (Wh.shape[0],):
        raise ValueError("query/key dimensions do not match attention parameters")
    return float(v @ np.tanh(q @ Wq + h @ Wh + b))


def attend(P: Params, q: Tensor, enc: Encoded) -> tuple[Tensor, Tensor]:
    """Attention weights (B, T) and context (B, 2H) for decoder query ``q``."""
    B = q.shape[0]
    steps, A = enc.h_proj.shape[1], enc.h_proj.shape[2]
    qp = T.reshape(T.matmul(q, P["att.Wq"]), (B, 1, A))
    energy = T.reshape(T.matmul(T.tanh(T.add(enc.h_proj, qp)), P["att.v"]), (B, steps))
    if enc.extra is not None:
        energy = T.add(energy, enc.extra)
    alpha = T.masked_softmax(energy, enc.mask)
    ctx = T.matmul(T.reshape(alpha, (B, 1, steps)), enc.h)
    return alpha, T.reshape(ctx, (B, enc.h.shape[2]))


def multi_source_attend(q, h, u, w_tilde, g: float, params: Params, mask=None):
    """Anchor-aware attention for one query: returns (alpha, context)."""
    h = np.asarray(h, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    steps = len(h)
    if steps < 1:
        raise ValueError("need at least one encoder frame")
    mask = np.ones(steps, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("all positions are padded")
    Wh, b = params["att.Wh"].data, params["att.b"].data
    enc = Encoded(
        h=Tensor(h[None]),
        mask=mask[None],
        h_proj=Tensor((h @ Wh + b)[None]),
        extra=Tensor(g * (u @ np.asarray(w_tilde, dtype=np.float64))[None]),
    )
    alpha, ctx = attend(params, Tensor(np.asarray(q, dtype=np.float64)[None]), enc)
    return alpha.data[0], ctx.data[0]


def mask_frames(h, u, w_tilde, g: float) -> tuple[np.ndarray, np.ndarray]:
    """Frame gate phi_t = sigmoid(g * u_t . w_tilde) and the gated frames."""
    h = np.asarray(h, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    w_tilde = np.asarray(w_tilde, dtype=np.float64)
    if u.shape[-1] != w_tilde.shape[-1] or len(u) != len(h):
        raise ValueError("dimension mismatch between h, u and w_tilde")
    phi = T.stable_sigmoid(g * (u @ w_tilde))
    return phi, h * phi[:, None]


@dataclass
class DecoderState:
    layers: list[tuple[Tensor, Tensor]]
    context: Tensor

    def take(self, rows: np.ndarray) -> "DecoderState":
        return DecoderState(
            [(Tensor(h.data[rows]), Tensor(c.data[rows])) for h, c in self.layers],
            Tensor(self.context.data[rows]),
        )


def initial_state(cfg: ModelConfig, batch_size: int) -> DecoderState:
    z = np.zeros((batch_size, cfg.decoder_units))
    return DecoderState(
        [(Tensor(z), Tensor(z)) for _ in range(cfg.decoder_layers)],
        Tensor(np.zeros((batch_size, cfg.encoder_dim))),
    )


def decode_step(
    P: Params, cfg: ModelConfig, enc: Encoded, state: DecoderState, y_prev: np.ndarray
) -> tuple[DecoderState, Tensor, Tensor]:
    """One decoder step: returns (new state, logits (B, V), attention (B, T)).

    Layer 1 reads [embedding(y_prev); previous context]; its output queries
    the attention, and every upper layer reads [lower output; new context].
    """
    y_prev = np.asarray(y_prev, dtype=np.int64)
    if np.any(y_prev < 0) or np.any(y_prev >= cfg.vocab_size):
        raise ValueError("decoder input symbol outside the vocabulary")
    emb = T.take_rows(P["dec.emb"], y_prev)
    x = T.concat([emb, state.context], axis=-1)
    new_layers = []
    h0, c0 = state.layers[0]
    h, c = T.lstm_cell(x, h0, c0, P["dec.lstm0.W"], P["dec.lstm0.U"], P["dec.lstm0.b"])
    new_layers.append((h, c))
    alpha, ctx = attend(P, h, enc)
    out = h
    for layer in range(1, cfg.decoder_layers):
        hl, cl = state.layers[layer]
        x = T.concat([out, ctx], axis=-1)
        out, cl = T.lstm_cell(
            x, hl, cl, P[f"dec.lstm{layer}.W"], P[f"dec.lstm{layer}.U"], P[f"dec.lstm{layer}.b"]
        )
        new_layers.append((out, cl))
    logits = T.add(T.matmul(out, P["out.W"]), P["out.b"])
    return DecoderState(new_layers, ctx), logits, alpha


# -- full forward ----------------------------------------------------------------


@dataclass
class ForwardTrace:
    h: Tensor
    mask: np.ndarray
    logits: Tensor
    alpha: np.ndarray
    u: Tensor | None = None
    w_tilde: Tensor | None = None
    phi: Tensor | None = None
    extras: dict = field(default_factory=dict)


def forward_batch(
    P: Params, cfg: ModelConfig, batch: Batch, force_phi: float | None = None,
    skip_decoder: bool = False,
) -> ForwardTrace:
    """Teacher-forced forward pass over a padded batch."""
    enc = encode_batch(P, cfg, batch, force_phi)
    B, N = batch.targets.shape
    if skip_decoder:
        return ForwardTrace(enc.h, enc.mask, None, None, enc.u, enc.w_tilde, enc.phi)  # type: ignore[arg-type]
    y_in = batch.decoder_inputs(cfg.vocab.sos_id)
    state = initial_state(cfg, B)
    step_logits, alphas = [], []
    for n in range(N):
        state, logits, alpha = decode_step(P, cfg, enc, state, y_in[:, n])
        step_logits.append(T.reshape(logits, (B, 1, cfg.vocab_size)))
        alphas.append(alpha.data)
    logits = T.concat(step_logits, axis=1)
    return ForwardTrace(
        enc.h, enc.mask, logits, np.stack(alphas, axis=1), enc.u, enc.w_tilde, enc.phi
    )


def forward(
    P: Params, cfg: ModelConfig, sample: AnchoredUtterance, teacher_targets: Sequence[int],
    force_phi: float | None = None,
) -> ForwardTrace:
    """Single-sample forward; ``teacher_targets`` must end with end-of-sequence."""
    vocab = cfg.vocab
    if not teacher_targets or teacher_targets[-1] != vocab.eos_id:
        raise ValueError("targets must end with end-of-sequence")
    batch = make_batch([sample], vocab, cfg.time_stride, targets=[list(teacher_targets)])
    return forward_batch(P, cfg, batch, force_phi)
