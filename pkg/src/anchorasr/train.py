"""Losses, Adam, and the training loop."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import AnchoredUtterance
from .decode import greedy_decode_batch
from .evaluation import corpus_counts, corpus_wer, mask_recall
from .model import Batch, ModelConfig, Params, forward_batch, make_batch, params_from_arrays, params_to_arrays
from .numerics import tensor as T
from .numerics.tensor import Tape, Tensor

DEFAULT_MASK_WEIGHTS = (0.6, 1.0)
FULL_SCALE_LR0 = 0.0008


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


# -- losses ------------------------------------------------------------------------


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def asr_loss(logits, targets, weights=None) -> Tensor:
    """Mean cross-entropy over (weighted) target positions.

    ``logits`` is (N, V) or (B, N, V); ``weights`` marks valid positions and
    defaults to all ones.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {logits.shape} do not match targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[-1]):
        raise ValueError("target symbol outside the vocabulary")
    w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("no target positions")
    return T.mul(T.softmax_cross_entropy(logits, targets, w), 1.0 / total)


def mask_loss(phi, gold, weights=DEFAULT_MASK_WEIGHTS, valid=None) -> Tensor:
    """Class-weighted BCE normalised by the total applied weight.

    ``weights`` is ``(w1, w0)``: the weight on frames labelled 1 and 0.
    """
    phi = _as_tensor(phi)
    gold = np.asarray(gold, dtype=np.float64)
    if phi.shape != gold.shape:
        raise ValueError("phi and gold must have the same shape")
    valid = np.ones(gold.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    w1, w0 = weights
    w = np.where(gold > 0.5, w1, w0) * valid
    total = w.sum()
    if total <= 0:
        raise ValueError("mask loss needs at least one valid frame")
    return T.mul(T.binary_cross_entropy(phi, gold, w), 1.0 / total)


def total_loss(asr, mask, lam: float, variant: str | None = None):
    """(1 - lam) * asr + lam * mask. Works on floats or Tensors."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if lam > 0 and variant is not None and variant != "mask_based":
        raise ValueError(f"variant {variant!r} has no frame mask; lambda must be 0")
    if isinstance(asr, Tensor) or isinstance(mask, Tensor):
        parts = []
        if lam < 1.0:
            parts.append(T.mul(_as_tensor(asr), 1.0 - lam))
        if lam > 0.0:
            parts.append(T.mul(_as_tensor(mask), lam))
        return parts[0] if len(parts) == 1 else T.add(parts[0], parts[1])
    return (1.0 - lam) * asr + lam * mask


def lr_schedule(epoch: int, lr0: float = FULL_SCALE_LR0, decay: float = 0.85) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * decay**epoch


# -- optimiser ---------------------------------------------------------------------


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class Adam:
    def __init__(self, params: Params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, params: Params, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    w1: float = DEFAULT_MASK_WEIGHTS[0]
    w0: float = DEFAULT_MASK_WEIGHTS[1]
    # toy-scale defaults; the full-scale schedule starts at 0.0008
    lr0: float = 0.005
    decay: float = 0.97
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.w1 <= 0 or self.w0 <= 0:
            raise ValueError("mask class weights must be positive")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid optimiser moments")

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = int(raw) if types[key] in ("int", int) else float(raw)
        return cls(**values)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


REPORT_COLUMNS = ("epoch", "asr_loss", "mask_loss", "total_loss", "dev_wer", "recall0", "recall1")


@dataclass
class EpochRecord:
    epoch: int
    asr_loss: float | None
    mask_loss: float
    total_loss: float
    dev_wer: float | None
    recall0: float | None
    recall1: float | None


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in self.epochs:
            row = asdict(r)
            writer.writerow(
                [r.epoch] + ["" if row[c] is None else repr(float(row[c])) for c in REPORT_COLUMNS[1:]]
            )
        return buf.getvalue()


# -- training loop -----------------------------------------------------------------


@dataclass
class BatchLosses:
    total: Tensor
    # None when the decoder is not trained (lam == 1)
    asr: float | None
    mask: float


def batch_objective(P: Params, cfg: ModelConfig, batch: Batch, tc: TrainConfig) -> BatchLosses:
    """Objective for one batch; call inside a Tape to record gradients.

    The ASR term is token-weighted across the batch. With ``lam == 1`` the
    decoder does not take part and the ASR term is evaluated off the tape.
    """
    lam = tc.lam
    total_loss(0.0, 0.0, lam, cfg.variant)
    need_mask = lam > 0
    if need_mask and batch.gold is None:
        raise ValueError("mask supervision needs gold masks")
    trace = forward_batch(P, cfg, batch, skip_decoder=lam >= 1.0)
    m = None
    if need_mask:
        m = mask_loss(trace.phi, batch.gold, (tc.w1, tc.w0), batch.gold_valid)
    if lam >= 1.0:
        return BatchLosses(m, None, m.item())
    a = asr_loss(trace.logits, batch.targets, batch.target_weights())
    return BatchLosses(
        total_loss(a, m if m is not None else 0.0, lam),
        a.item(),
        m.item() if m is not None else 0.0,
    )


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def evaluate_dev(P: Params, cfg: ModelConfig, dev: Sequence[AnchoredUtterance], tc: TrainConfig, decode: bool = True):
    """(dev WER, dev mask loss or None, recall0, recall1)."""
    wer = None
    if decode:
        hyps = greedy_decode_batch(P, cfg, dev)
        vocab = cfg.vocab
        wer = corpus_wer(corpus_counts([u.transcript for u in dev], [h.text(vocab) for h in hyps]))
    m_loss = r0 = r1 = None
    if cfg.variant == "mask_based" and any(u.gold_mask is not None for u in dev):
        phis, golds, total, weight = [], [], 0.0, 0.0
        for start in range(0, len(dev), 64):
            chunk = [u for u in dev[start : start + 64] if u.gold_mask is not None]
            if not chunk:
                continue
            batch = make_batch(chunk, cfg.vocab, cfg.time_stride, targets=[[cfg.vocab.eos_id]] * len(chunk))
            trace = forward_batch(P, cfg, batch, skip_decoder=True)
            w = np.where(batch.gold > 0.5, tc.w1, tc.w0) * batch.gold_valid
            total += mask_loss(trace.phi, batch.gold, (tc.w1, tc.w0), batch.gold_valid).item() * w.sum()
            weight += w.sum()
            phis.append(trace.phi.data[batch.gold_valid])
            golds.append(batch.gold[batch.gold_valid])
        m_loss = total / weight
        r0, r1 = mask_recall(np.concatenate(phis), np.concatenate(golds))
    return wer, m_loss, r0, r1


def fit(
    params: Params,
    cfg: ModelConfig,
    corpus: Sequence[AnchoredUtterance],
    tc: TrainConfig,
    dev: Sequence[AnchoredUtterance] | None = None,
    log=None,
) -> tuple[Params, TrainReport]:
    """Train a copy of ``params``; returns the best checkpoint and the report.

    Selection uses dev WER (greedy decoding), or dev mask loss when
    ``lam == 1`` because the decoder is then untrained. Without a dev set the
    final epoch is returned.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    total_loss(0.0, 0.0, tc.lam, cfg.variant)
    P = params_from_arrays(params_to_arrays(params))
    opt = Adam(P, tc.beta1, tc.beta2, tc.eps)
    report = TrainReport()
    best_key, best_arrays = None, None
    vocab = cfg.vocab
    for epoch in range(tc.epochs):
        rng = np.random.default_rng([tc.seed, 4, epoch])
        lr = lr_schedule(epoch, tc.lr0, tc.decay)
        sums = np.zeros(3)
        weight = 0.0
        for b_idx, rows in enumerate(_batches(len(corpus), tc.batch_size, rng)):
            batch = make_batch([corpus[i] for i in rows], vocab, cfg.time_stride)
            # overflow is caught below as a non-finite loss
            with Tape() as tape, np.errstate(over="ignore", invalid="ignore"):
                losses = batch_objective(P, cfg, batch, tc)
            value = losses.total.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, b_idx, value)
            with np.errstate(over="ignore", invalid="ignore"):
                grads = tape.gradients(losses.total, P)
            grads, _ = clip_by_global_norm(grads, tc.clip_norm)
            opt.step(P, grads, lr)
            asr = 0.0 if losses.asr is None else losses.asr
            sums += len(rows) * np.array([asr, losses.mask, value])
            weight += len(rows)
        asr_avg, mask_avg, total_avg = (float(x) for x in sums / weight)
        if tc.lam >= 1.0:
            asr_avg = None
        wer, dev_mask, r0, r1 = None, None, None, None
        if dev:
            wer, dev_mask, r0, r1 = evaluate_dev(P, cfg, dev, tc, decode=tc.lam < 1.0)
        report.epochs.append(EpochRecord(epoch, asr_avg, mask_avg, total_avg, wer, r0, r1))
        if log is not None:
            log(report.epochs[-1])
        if dev:
            key = dev_mask if tc.lam >= 1.0 else wer
        else:
            key = -epoch
        if best_key is None or key < best_key:
            best_key, best_arrays = key, params_to_arrays(P)
            report.best_epoch = epoch
    return params_from_arrays(best_arrays), report
