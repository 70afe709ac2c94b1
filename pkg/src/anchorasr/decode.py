"""Beam-search and greedy decoding."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import AnchoredUtterance, Vocabulary
from .model import ModelConfig, Params, decode_step, encode_batch, forward, initial_state, make_batch


@dataclass(frozen=True)
class Hypothesis:
    """A decoded sequence. ``tokens`` keeps the end-of-sequence id if one was emitted."""

    tokens: tuple[int, ...]
    log_prob: float
    finished: bool
    eos_id: int = 2

    @property
    def symbols(self) -> tuple[int, ...]:
        if self.tokens and self.tokens[-1] == self.eos_id:
            return self.tokens[:-1]
        return self.tokens

    @property
    def ended(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == self.eos_id

    def text(self, vocab: Vocabulary) -> str:
        return vocab.decode(self.symbols)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return z - (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))


def _emittable(cfg: ModelConfig) -> np.ndarray:
    vocab = cfg.vocab
    allowed = np.ones(cfg.vocab_size, dtype=bool)
    allowed[[vocab.pad_id, vocab.sos_id]] = False
    return allowed


def default_max_len(cfg: ModelConfig, sample: AnchoredUtterance) -> int:
    return 2 * (-(-len(sample.body) // cfg.time_stride))


def search(
    step: Callable[[object, np.ndarray], tuple[object, np.ndarray]],
    state,
    start_symbol: int,
    eos_id: int,
    beam_size: int,
    max_len: int,
    allowed: np.ndarray | None = None,
) -> list[Hypothesis]:
    """Beam search over an arbitrary step function.

    ``step(state, y_prev)`` returns the next state and per-row log
    probabilities (K, V); ``state.take(rows)`` must select/replicate rows.
    Hypotheses are ranked by total log probability (no length
    normalisation); ties resolve towards the lower symbol, then the earlier
    parent.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    live_tokens: list[tuple[int, ...]] = [()]
    scores = np.zeros(1)
    y_prev = np.array([start_symbol])
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        state, logp = step(state, y_prev)
        logp = np.array(logp, dtype=np.float64)
        if allowed is not None:
            logp[:, ~allowed] = -np.inf
        total = scores[:, None] + logp
        parents, syms = np.nonzero(np.isfinite(total))
        cand = total[parents, syms]
        order = np.lexsort((parents, syms, -cand))[:beam_size]
        next_tokens, next_scores, rows, next_y = [], [], [], []
        for k in order:
            parent, sym, score = int(parents[k]), int(syms[k]), float(cand[k])
            tokens = live_tokens[parent] + (sym,)
            if sym == eos_id:
                finished.append(Hypothesis(tokens, score, True, eos_id))
            else:
                next_tokens.append(tokens)
                next_scores.append(score)
                rows.append(parent)
                next_y.append(sym)
        live_tokens = next_tokens
        if not live_tokens:
            break
        scores = np.array(next_scores)
        state = state.take(np.array(rows))
        y_prev = np.array(next_y)
        # scores only decrease, so no live hypothesis can overtake the best finished one
        if finished and max(h.log_prob for h in finished) >= scores.max():
            break
    remaining = [
        Hypothesis(t, float(s), len(t) >= max_len, eos_id) for t, s in zip(live_tokens, scores)
    ]
    return sorted(finished + remaining, key=lambda h: (-h.log_prob, h.tokens))


class _ModelState:
    """Decoder state plus the encoder output replicated to match its rows."""

    def __init__(self, params, cfg, enc1, enc, dec):
        self.params, self.cfg, self.enc1, self.enc, self.dec = params, cfg, enc1, enc, dec

    def take(self, rows: np.ndarray) -> "_ModelState":
        enc = self.enc if len(rows) == self.enc.mask.shape[0] else self.enc1.take(np.zeros(len(rows), dtype=np.int64))
        return _ModelState(self.params, self.cfg, self.enc1, enc, self.dec.take(rows))


def _model_step(st: _ModelState, y_prev: np.ndarray):
    dec, logits, _ = decode_step(st.params, st.cfg, st.enc, st.dec, y_prev)
    return _ModelState(st.params, st.cfg, st.enc1, st.enc, dec), _log_softmax(logits.data)


def beam_search(
    params: Params,
    cfg: ModelConfig,
    sample: AnchoredUtterance,
    beam_size: int = 15,
    max_len: int | None = None,
) -> list[Hypothesis]:
    """Ranked hypotheses for one utterance; padding and start symbols are never emitted."""
    if max_len is None:
        max_len = default_max_len(cfg, sample)
    vocab = cfg.vocab
    batch = make_batch([sample], vocab, cfg.time_stride, targets=[[vocab.eos_id]])
    enc1 = encode_batch(params, cfg, batch)
    state = _ModelState(params, cfg, enc1, enc1, initial_state(cfg, 1))
    return search(_model_step, state, vocab.sos_id, vocab.eos_id, beam_size, max_len, _emittable(cfg))


def greedy_decode(
    params: Params, cfg: ModelConfig, sample: AnchoredUtterance, max_len: int | None = None
) -> Hypothesis:
    return beam_search(params, cfg, sample, beam_size=1, max_len=max_len)[0]


def greedy_decode_batch(
    params: Params,
    cfg: ModelConfig,
    samples: Sequence[AnchoredUtterance],
    max_len: int | None = None,
    batch_size: int = 64,
) -> list[Hypothesis]:
    """Greedy decoding of many utterances at once (used for dev-set scoring)."""
    vocab = cfg.vocab
    eos = vocab.eos_id
    allowed = _emittable(cfg)
    out: list[Hypothesis] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        batch = make_batch(chunk, vocab, cfg.time_stride, targets=[[eos]] * len(chunk))
        enc = encode_batch(params, cfg, batch)
        B = len(chunk)
        limits = np.array(
            [max_len if max_len is not None else default_max_len(cfg, u) for u in chunk]
        )
        state = initial_state(cfg, B)
        y = np.full(B, vocab.sos_id)
        tokens: list[list[int]] = [[] for _ in range(B)]
        scores = np.zeros(B)
        done = np.zeros(B, dtype=bool)
        for step in range(int(limits.max())):
            state, logits, _ = decode_step(params, cfg, enc, state, y)
            logp = _log_softmax(logits.data)
            logp[:, ~allowed] = -np.inf
            y = np.argmax(logp, axis=1)
            for b in np.flatnonzero(~done):
                tokens[b].append(int(y[b]))
                scores[b] += logp[b, y[b]]
                if y[b] == eos or len(tokens[b]) >= limits[b]:
                    done[b] = True
            if done.all():
                break
        out.extend(
            Hypothesis(tuple(t), float(s), True, eos) for t, s in zip(tokens, scores)
        )
    return out


def rescore(params: Params, cfg: ModelConfig, sample: AnchoredUtterance, tokens: Sequence[int]) -> float:
    """Total log probability of ``tokens`` under teacher forcing (independent of search)."""
    tokens = list(tokens)
    eos = cfg.vocab.eos_id
    teacher = tokens if tokens and tokens[-1] == eos else tokens + [eos]
    trace = forward(params, cfg, sample, teacher)
    logp = _log_softmax(trace.logits.data[0])
    return float(sum(logp[n, tok] for n, tok in enumerate(tokens)))


# -- hypothesis files ---------------------------------------------------------------


def write_hypotheses(path, records: Iterable[tuple[str, float, str]]) -> None:
    lines = [f"{uid}\t{float(logp)!r}\t{text}\n" for uid, logp, text in records]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_hypotheses(path) -> list[tuple[str, float, str]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        out.append((parts[0], float(parts[1]), parts[2]))
    return out
