"""Synthetic interfering-speech data: segment insertion, body replacement, mixing."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import AnchoredUtterance

# Toy-scale insertion lengths; bodies are roughly 20-60 frames.
DEFAULT_SEG_LEN_RANGE = (5, 15)


@dataclass(frozen=True)
class MixSpec:
    unchanged: float
    method1: float
    method2: float

    def __post_init__(self):
        fr = self.fractions
        if any(f < 0 for f in fr):
            raise ValueError("mix fractions must be non-negative")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"mix fractions must sum to 1, got {sum(fr)!r}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.unchanged, self.method1, self.method2)

    @classmethod
    def parse(cls, text: str) -> "MixSpec":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError("mix spec needs three comma-separated fractions")
        return cls(*parts)


DEFAULT_MIX = MixSpec(0.50, 0.44, 0.06)


def _base_mask(utt: AnchoredUtterance) -> np.ndarray:
    if utt.gold_mask is not None:
        return utt.gold_mask.astype(np.uint8)
    return np.ones(len(utt.body), dtype=np.uint8)


def synth_method1(
    utt: AnchoredUtterance,
    donor: AnchoredUtterance,
    seg_len_range: tuple[int, int] = DEFAULT_SEG_LEN_RANGE,
    seed: int = 0,
    *,
    seg_len: int | None = None,
    position: int | None = None,
) -> AnchoredUtterance:
    """Insert a random donor segment into the body; transcript is kept.

    Segment length is uniform in ``seg_len_range`` and the insertion offset is
    uniform over ``[0, L]``. ``seg_len``/``position`` pin either draw.
    """
    if donor.id == utt.id:
        raise ValueError("donor must be a different utterance")
    lo, hi = seg_len_range
    if lo < 1 or lo > hi:
        raise ValueError("seg_len_range must be a non-empty range of positive lengths")
    if len(donor.body) < hi:
        raise ValueError(
            f"donor {donor.id} has {len(donor.body)} frames, segments can reach {hi}"
        )
    rng = np.random.default_rng(seed)
    S = int(rng.integers(lo, hi + 1)) if seg_len is None else int(seg_len)
    L = len(utt.body)
    p = int(rng.integers(0, L + 1)) if position is None else int(position)
    if not 0 <= p <= L:
        raise ValueError(f"insertion position {p} outside [0, {L}]")
    if S > len(donor.body):
        raise ValueError("segment longer than donor body")
    start = int(rng.integers(0, len(donor.body) - S + 1))
    segment = donor.body[start : start + S]
    body = np.concatenate([utt.body[:p], segment, utt.body[p:]])
    base = _base_mask(utt)
    mask = np.concatenate([base[:p], np.zeros(S, dtype=np.uint8), base[p:]])
    return AnchoredUtterance(utt.id, utt.anchor.copy(), body, utt.transcript, mask)


def synth_method2(utt: AnchoredUtterance, donor: AnchoredUtterance) -> AnchoredUtterance:
    """Replace the body with the donor's body; the transcript becomes empty."""
    if donor.id == utt.id:
        raise ValueError("donor must be a different utterance")
    body = donor.body.copy()
    return AnchoredUtterance(
        utt.id, utt.anchor.copy(), body, "", np.zeros(len(body), dtype=np.uint8)
    )


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer counts summing to ``n`` closest to ``n * fractions``."""
    exact = [n * f for f in fractions]
    counts = [int(np.floor(e)) for e in exact]
    short = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda k: (-(exact[k] - counts[k]), k))
    for k in order[:short]:
        counts[k] += 1
    return counts


def mix_corpus(
    corpus: Sequence[AnchoredUtterance],
    spec: MixSpec = DEFAULT_MIX,
    seg_len_range: tuple[int, int] = DEFAULT_SEG_LEN_RANGE,
    seed: int = 0,
) -> list[AnchoredUtterance]:
    """Corrupt a seeded subset of ``corpus`` per ``spec``; order is preserved.

    Unchanged utterances get an all-ones gold mask so the mask loss is defined
    everywhere.
    """
    n = len(corpus)
    if n < 2:
        raise ValueError("mixing needs at least 2 utterances (donors come from the corpus)")
    counts = largest_remainder(n, spec.fractions)
    rng = np.random.default_rng([seed, 2])
    order = rng.permutation(n)
    kind = np.empty(n, dtype=np.int64)
    kind[order[: counts[0]]] = 0
    kind[order[counts[0] : counts[0] + counts[1]]] = 1
    kind[order[counts[0] + counts[1] :]] = 2
    long_enough = np.array([len(u.body) >= seg_len_range[1] for u in corpus])
    out = []
    for i, utt in enumerate(corpus):
        urng = np.random.default_rng([seed, 3, i])
        if kind[i] == 0:
            out.append(
                AnchoredUtterance(utt.id, utt.anchor, utt.body, utt.transcript, _base_mask(utt))
            )
            continue
        pool = np.flatnonzero(long_enough) if kind[i] == 1 else np.arange(n)
        pool = pool[pool != i]
        if pool.size == 0:
            raise ValueError(f"no eligible donor for {utt.id}")
        donor = corpus[int(pool[urng.integers(pool.size)])]
        if kind[i] == 1:
            out.append(synth_method1(utt, donor, seg_len_range, seed=int(urng.integers(2**63))))
        else:
            out.append(synth_method2(utt, donor))
    return out


def assignment_counts(corpus: Sequence[AnchoredUtterance]) -> tuple[int, int, int]:
    """(unchanged, method1, method2) counts, read back from gold masks."""
    n0 = n1 = n2 = 0
    for utt in corpus:
        m = utt.gold_mask
        if m is None or m.all():
            n0 += 1
        elif not m.any():
            n2 += 1
        else:
            n1 += 1
    return n0, n1, n2


def downsample_mask(mask, time_factor: int) -> np.ndarray:
    """Majority label per window of ``time_factor`` frames; ties become 0."""
    if time_factor < 1:
        raise ValueError("time_factor must be >= 1")
    m = np.asarray(mask, dtype=np.int64)
    L = len(m)
    n_out = -(-L // time_factor)
    padded = np.zeros(n_out * time_factor, dtype=np.int64)
    padded[:L] = m
    ones = padded.reshape(n_out, time_factor).sum(axis=1)
    sizes = np.full(n_out, time_factor)
    if n_out:
        sizes[-1] = L - (n_out - 1) * time_factor
    return (2 * ones > sizes).astype(np.uint8)
