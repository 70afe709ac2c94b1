"""Anchored utterances, grapheme vocabularies, toy corpora and the corpus file format."""
from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, SOS, EOS = "<pad>", "<s>", "</s>"
RESERVED = (PAD, SOS, EOS)

MAGIC = b"ANCH"
FORMAT_VERSION = 1


@dataclass(eq=False)
class AnchoredUtterance:
    """Anchor (wake-word) frames, body frames, transcript and optional gold mask.

    Frames are float32 (frames, feat_dim) matrices; ``gold_mask`` marks body
    frames that belong to the anchor's speaker with 1.
    """

    id: str
    anchor: np.ndarray
    body: np.ndarray
    transcript: str
    gold_mask: np.ndarray | None = None

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.float32)
        self.body = np.asarray(self.body, dtype=np.float32)
        if self.anchor.ndim != 2 or self.body.ndim != 2:
            raise ValueError(f"{self.id}: frames must be (frames, dims) matrices")
        if len(self.anchor) < 1 or len(self.body) < 1:
            raise ValueError(f"{self.id}: anchor and body need at least one frame")
        if self.anchor.shape[1] != self.body.shape[1]:
            raise ValueError(f"{self.id}: anchor and body feature dims differ")
        if self.gold_mask is not None:
            self.gold_mask = np.asarray(self.gold_mask, dtype=np.uint8)
            if self.gold_mask.shape != (len(self.body),):
                raise MaskLengthError(
                    f"{self.id}: mask has {self.gold_mask.size} labels for {len(self.body)} frames"
                )
            if np.any(self.gold_mask > 1):
                raise ValueError(f"{self.id}: mask labels must be 0 or 1")

    @property
    def feat_dim(self) -> int:
        return self.body.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnchoredUtterance):
            return NotImplemented
        masks_equal = (self.gold_mask is None and other.gold_mask is None) or (
            self.gold_mask is not None
            and other.gold_mask is not None
            and np.array_equal(self.gold_mask, other.gold_mask)
        )
        return (
            self.id == other.id
            and self.transcript == other.transcript
            and np.array_equal(self.anchor, other.anchor)
            and np.array_equal(self.body, other.body)
            and masks_equal
        )


# -- vocabulary ----------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    graphemes: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        symbols = self.symbols
        if len(set(symbols)) != len(symbols):
            raise ValueError("vocabulary symbols must be unique")
        if any(len(g) != 1 for g in self.graphemes):
            raise ValueError("graphemes must be single characters")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})

    @property
    def symbols(self) -> tuple[str, ...]:
        return RESERVED + tuple(self.graphemes)

    def __len__(self) -> int:
        return len(self.symbols)

    pad_id = 0
    sos_id = 1
    eos_id = 2

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[ch] for ch in text]
        except KeyError as exc:
            raise KeyError(f"character {exc.args[0]!r} is not in the vocabulary") from None

    def targets(self, text: str) -> list[int]:
        """Decoder targets: the encoded transcript followed by end-of-sequence."""
        return self.encode(text) + [self.eos_id]

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i < len(RESERVED):
                raise ValueError(f"reserved symbol {self.symbols[i]} has no surface form")
            out.append(self.symbols[i])
        return "".join(out)

    def symbol(self, i: int) -> str:
        return self.symbols[i]


def build_vocab(transcripts: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Characters seen at least ``min_count`` times, in codepoint order."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for text in transcripts:
        counts.update(text)
    kept = sorted(ch for ch, n in counts.items() if n >= min_count)
    if not kept:
        raise ValueError("no characters reach min_count; vocabulary would be empty")
    return Vocabulary(tuple(kept))


# -- toy corpus --------------------------------------------------------------------


@dataclass(frozen=True)
class ToyCorpusConfig:
    n_utts: int = 200
    feat_dim: int = 8
    speakers: int = 8
    transcript_len_range: tuple[int, int] = (3, 8)
    anchor_len_range: tuple[int, int] = (8, 16)
    body_len_per_grapheme: int = 4
    noise_scale: float = 0.25
    graphemes: str = "abcdefghij "
    template_scale: float = 1.0
    template_jitter: float = 0.1
    bias_scale: float = 1.0

    def validate(self) -> None:
        if self.speakers < 2:
            raise ValueError("need at least 2 speakers")
        if self.feat_dim < 2:
            raise ValueError("feat_dim must be >= 2")
        if self.n_utts < 1:
            raise ValueError("n_utts must be >= 1")
        for name in ("transcript_len_range", "anchor_len_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ValueError(f"{name} must be a non-empty range of positive lengths")
        if self.body_len_per_grapheme < 1:
            raise ValueError("body_len_per_grapheme must be >= 1")
        if not self.graphemes.replace(" ", ""):
            raise ValueError("graphemes need at least one non-space character")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ToyCorpusConfig":
        """Build from a JSON object; missing keys keep their defaults."""
        raw = json.loads(text)
        if not isinstance(raw, dict):
            raise ValueError("corpus config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown corpus config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: int
    bias: np.ndarray
    templates: dict
    noise_scale: float


def make_speakers(config: ToyCorpusConfig, seed: int) -> list[SpeakerProfile]:
    """Speaker profiles whose biases differ by >= 4 noise scales in some component."""
    rng = np.random.default_rng([seed, 1])
    base = {g: rng.normal(scale=config.template_scale, size=config.feat_dim) for g in config.graphemes}
    need = 4.0 * config.noise_scale
    biases: list[np.ndarray] = []
    attempts = 0
    while len(biases) < config.speakers:
        cand = rng.normal(scale=config.bias_scale, size=config.feat_dim)
        if all(np.max(np.abs(cand - b)) >= need for b in biases):
            biases.append(cand)
        attempts += 1
        if attempts > 10000:
            raise ValueError("cannot draw separable speaker biases; raise bias_scale")
    profiles = []
    for s, bias in enumerate(biases):
        templates = {
            g: t + rng.normal(scale=config.template_jitter, size=config.feat_dim)
            for g, t in base.items()
        }
        profiles.append(SpeakerProfile(s, bias, templates, config.noise_scale))
    return profiles


def _random_transcript(rng: np.random.Generator, graphemes: str, length: int) -> str:
    letters = [g for g in graphemes if g != " "]
    has_space = " " in graphemes
    chars: list[str] = []
    for k in range(length):
        edge = k == 0 or k == length - 1 or chars[-1] == " "
        if has_space and not edge and rng.random() < 0.3:
            chars.append(" ")
        else:
            chars.append(letters[int(rng.integers(len(letters)))])
    return "".join(chars)


def gen_toy_corpus(config: ToyCorpusConfig, seed: int, id_prefix: str = "") -> list[AnchoredUtterance]:
    """Synthetic anchored utterances; a pure function of ``(config, seed)``.

    Each utterance picks a speaker; anchor frames are that speaker's bias plus
    noise, body frames are the transcript's grapheme templates (each held for
    ``body_len_per_grapheme`` frames) plus bias plus noise.
    """
    config.validate()
    speakers = make_speakers(config, seed)
    utts = []
    for i in range(config.n_utts):
        rng = np.random.default_rng([seed, 0, i])
        spk = speakers[int(rng.integers(len(speakers)))]
        n_chars = int(rng.integers(config.transcript_len_range[0], config.transcript_len_range[1] + 1))
        text = _random_transcript(rng, config.graphemes, n_chars)
        n_anchor = int(rng.integers(config.anchor_len_range[0], config.anchor_len_range[1] + 1))
        anchor = spk.bias + rng.normal(scale=spk.noise_scale, size=(n_anchor, config.feat_dim))
        frames = np.repeat(
            np.stack([spk.templates[ch] for ch in text]), config.body_len_per_grapheme, axis=0
        )
        body = frames + spk.bias + rng.normal(scale=spk.noise_scale, size=frames.shape)
        utts.append(
            AnchoredUtterance(
                id=f"{id_prefix}spk{spk.speaker_id:02d}-{i:05d}",
                anchor=anchor,
                body=body,
                transcript=text,
            )
        )
    return utts


def speaker_of(utt: AnchoredUtterance) -> str:
    """Speaker tag embedded in toy utterance ids (``...spkNN-...``)."""
    head = utt.id.split("-")[0]
    return head[head.rfind("spk") :]


# -- file format ------------------------------------------------------------------


class CorpusFormatError(ValueError):
    pass


class BadMagicError(CorpusFormatError):
    pass


class VersionMismatchError(CorpusFormatError):
    pass


class TruncatedPayloadError(CorpusFormatError):
    pass


class MaskLengthError(CorpusFormatError):
    pass


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for the corpus format")
    return struct.pack("<H", len(raw)) + raw


def corpus_to_bytes(corpus: Sequence[AnchoredUtterance]) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(corpus))]
    for utt in corpus:
        if utt.gold_mask is not None and len(utt.gold_mask) != len(utt.body):
            raise MaskLengthError(f"{utt.id}: mask length differs from body length")
        parts.append(_pack_str(utt.id))
        parts.append(_pack_str(utt.transcript))
        parts.append(struct.pack("<HII", utt.feat_dim, len(utt.anchor), len(utt.body)))
        parts.append(np.ascontiguousarray(utt.anchor, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(utt.body, dtype="<f4").tobytes())
        if utt.gold_mask is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01" + np.asarray(utt.gold_mask, dtype=np.uint8).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise TruncatedPayloadError(
                f"truncated payload: need {n} bytes at offset {self.pos}, file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def corpus_from_bytes(buf: bytes) -> list[AnchoredUtterance]:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError("not a corpus file (bad magic)")
    r.take(4)
    version, count = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"corpus format version {version}, expected {FORMAT_VERSION}")
    utts = []
    for _ in range(count):
        uid = r.string()
        text = r.string()
        dim, n_anchor, n_body = r.unpack("<HII")
        anchor = np.frombuffer(r.take(4 * n_anchor * dim), dtype="<f4").reshape(n_anchor, dim)
        body = np.frombuffer(r.take(4 * n_body * dim), dtype="<f4").reshape(n_body, dim)
        (flag,) = r.unpack("<B")
        mask = None
        if flag == 1:
            mask = np.frombuffer(r.take(n_body), dtype=np.uint8).copy()
        elif flag != 0:
            raise CorpusFormatError(f"{uid}: invalid mask flag {flag}")
        utts.append(
            AnchoredUtterance(uid, anchor.astype(np.float32), body.astype(np.float32), text, mask)
        )
    if r.pos != len(buf):
        raise CorpusFormatError(f"{len(buf) - r.pos} unexpected trailing bytes")
    return utts


def write_corpus(corpus: Sequence[AnchoredUtterance], path) -> None:
    Path(path).write_bytes(corpus_to_bytes(corpus))


def read_corpus(path) -> list[AnchoredUtterance]:
    return corpus_from_bytes(Path(path).read_bytes())
