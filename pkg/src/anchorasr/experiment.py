"""Table-style comparison runs: models x training data x test sets, per seed."""
from __future__ import annotations

import hashlib
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from .augment import DEFAULT_SEG_LEN_RANGE, DEFAULT_MIX, MixSpec, mix_corpus
from .checkpoint import save_checkpoint
from .corpus import AnchoredUtterance, ToyCorpusConfig, gen_toy_corpus, write_corpus
from .decode import beam_search, write_hypotheses
from .evaluation import (
    ErrorCounts,
    Metrics,
    ScoreRow,
    corpus_counts,
    normalize_report,
    score_table_csv,
    werr,
)
from .model import desk_config, init_params
from .train import TrainConfig, fit

log = logging.getLogger(__name__)

DEVICE_ONLY = "device-directed-only"
AUGMENTED = "augmented"
NORMAL, HARD = "normal", "hard"


@dataclass(frozen=True)
class RunSpec:
    variant: str
    training_set: str
    lam: float = 0.0

    @property
    def label(self) -> str:
        if self.variant == "mask_based":
            return f"mask_based (lambda={self.lam:g})"
        return self.variant

    @property
    def key(self) -> str:
        tag = "dd" if self.training_set == DEVICE_ONLY else "aug"
        return f"{self.variant}-{tag}-lam{self.lam:g}"


DEFAULT_RUNS = (
    RunSpec("baseline", DEVICE_ONLY),
    RunSpec("baseline", AUGMENTED),
    RunSpec("multi_source", DEVICE_ONLY),
    RunSpec("multi_source", AUGMENTED),
    RunSpec("mask_based", AUGMENTED, 0.1),
    RunSpec("mask_based", AUGMENTED, 0.0),
)
REFERENCE = RunSpec("baseline", DEVICE_ONLY)


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    n_train: int = 6000
    n_dev: int = 200
    n_test: int = 400
    # noisier than the corpus default so the clean test set has a nonzero error floor
    corpus: ToyCorpusConfig = ToyCorpusConfig(noise_scale=0.5)
    mix: MixSpec = DEFAULT_MIX
    seg_len_range: tuple[int, int] = DEFAULT_SEG_LEN_RANGE
    init_scale: float = 0.1
    # desk-topology overrides; feature size and graphemes follow the corpus
    model: dict = field(default_factory=dict)
    train: TrainConfig = TrainConfig()
    beam: int = 15
    runs: tuple[RunSpec, ...] = DEFAULT_RUNS

    def to_json(self) -> str:
        raw = asdict(self)
        return json.dumps(raw, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        raw = json.loads(text)
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        out = {}
        for key, value in raw.items():
            if key == "corpus":
                value = ToyCorpusConfig.from_json(json.dumps(value))
            elif key == "mix":
                value = MixSpec(**value) if isinstance(value, dict) else MixSpec(*value)
            elif key == "train":
                value = TrainConfig(**value)
            elif key == "runs":
                value = tuple(RunSpec(**r) for r in value)
            elif isinstance(value, list):
                value = tuple(value)
            out[key] = value
        return cls(**out)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]


def model_config(cfg: ExperimentConfig, variant: str):
    overrides = {k: v for k, v in cfg.model.items() if k != "variant"}
    if variant != "mask_based":
        # the recurrent S-Encoder belongs to the mask-based topology only
        overrides.pop("s_recurrent_units", None)
        overrides.pop("pooling", None)
    return desk_config(
        variant,
        feat_dim=cfg.corpus.feat_dim,
        graphemes=cfg.corpus.graphemes,
        init_scale=cfg.init_scale,
        **overrides,
    )


@dataclass
class DataSplits:
    train: dict[str, list[AnchoredUtterance]]
    dev: dict[str, list[AnchoredUtterance]]
    test: dict[str, list[AnchoredUtterance]]


def build_data(cfg: ExperimentConfig, seed: int) -> DataSplits:
    """Train/dev/test splits of one toy corpus.

    The hard test set inserts a Method-1 segment into every held-out test
    utterance; the normal set is the same utterances untouched.
    """
    n = cfg.n_train + cfg.n_dev + cfg.n_test
    corpus = gen_toy_corpus(replace(cfg.corpus, n_utts=n), seed)
    train = corpus[: cfg.n_train]
    dev = corpus[cfg.n_train : cfg.n_train + cfg.n_dev]
    test = corpus[cfg.n_train + cfg.n_dev :]
    all_method1 = MixSpec(0.0, 1.0, 0.0)
    return DataSplits(
        train={DEVICE_ONLY: train, AUGMENTED: mix_corpus(train, cfg.mix, cfg.seg_len_range, seed)},
        dev={DEVICE_ONLY: dev, AUGMENTED: mix_corpus(dev, cfg.mix, cfg.seg_len_range, seed + 1)},
        test={NORMAL: test, HARD: mix_corpus(test, all_method1, cfg.seg_len_range, seed + 2)},
    )


@dataclass
class RunResult:
    spec: RunSpec
    counts: dict[str, ErrorCounts] = field(default_factory=dict)
    best_epoch: int = -1


MetricTable = dict  # RunSpec -> {test set: Metrics}


def metric_table(results: Sequence[RunResult]) -> MetricTable:
    return {r.spec: {t: Metrics.from_counts(c) for t, c in r.counts.items()} for r in results}


def median_table(per_seed: Sequence[Sequence[RunResult]]) -> MetricTable:
    """Field-wise median over seeds of WER, sub, ins and del."""
    tables = [metric_table(results) for results in per_seed]
    out = {}
    for spec in tables[0]:
        out[spec] = {}
        for t in tables[0][spec]:
            ms = [tab[spec][t] for tab in tables]
            out[spec][t] = Metrics(*(statistics.median(getattr(m, f) for m in ms) for f in ("wer", "sub", "ins", "dele")))
    return out


def score_rows(table: MetricTable) -> list[ScoreRow]:
    """Rows in run order; WERR is against the device-directed-only baseline on the same test set."""
    ref = table.get(REFERENCE)
    rows = []
    for spec, by_test in table.items():
        for t in (NORMAL, HARD):
            m = by_test[t]
            w = None
            if ref is not None and spec != REFERENCE and ref[t].wer > 0:
                w = werr(ref[t].wer, m.wer)
            rows.append(ScoreRow(spec.label, spec.training_set, t, m, w))
    return rows


def normalized(table: MetricTable) -> MetricTable | None:
    """Every entry divided by the reference normal-set WER, or None if that WER is 0."""
    ref = table.get(REFERENCE)
    if ref is None or ref[NORMAL].wer <= 0:
        return None
    base = ref[NORMAL].wer
    return {spec: normalize_report(by_test, base).rows for spec, by_test in table.items()}


def write_tables(table: MetricTable, out_dir: Path, stem: str) -> dict[str, Path]:
    files = {"table": out_dir / f"{stem}.csv"}
    files["table"].write_text(score_table_csv(score_rows(table)), encoding="utf-8")
    norm = normalized(table)
    if norm is not None:
        files["normalized"] = out_dir / f"{stem}_normalized.csv"
        files["normalized"].write_text(score_table_csv(score_rows(norm)), encoding="utf-8")
    return files


def counts_table(results: Sequence[RunResult]) -> str:
    lines = ["model,training set,test set,ref_words,sub,ins,del,best_epoch"]
    for r in results:
        for t in (NORMAL, HARD):
            c = r.counts[t]
            lines.append(
                f"{r.spec.label},{r.spec.training_set},{t},{c.ref_len},"
                f"{c.substitutions},{c.insertions},{c.deletions},{r.best_epoch}"
            )
    return "\n".join(lines) + "\n"


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: Path | None = None) -> list[RunResult]:
    data = build_data(cfg, seed)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, split in (("train", data.train), ("test", data.test)):
            for tag, utts in split.items():
                write_corpus(utts, out_dir / f"{name}-{tag}.anch")
    results = []
    for spec in cfg.runs:
        model_cfg = model_config(cfg, spec.variant)
        params = init_params(model_cfg, seed)
        tc = replace(cfg.train, lam=spec.lam, seed=seed)
        log.info("seed %d: training %s on %s", seed, spec.label, spec.training_set)
        trained, report = fit(params, model_cfg, data.train[spec.training_set], tc, data.dev[spec.training_set])
        result = RunResult(spec, best_epoch=report.best_epoch)
        vocab = model_cfg.vocab
        for test_set, utts in data.test.items():
            hyps = [beam_search(trained, model_cfg, u, beam_size=cfg.beam)[0] for u in utts]
            texts = [h.text(vocab) for h in hyps]
            result.counts[test_set] = corpus_counts([u.transcript for u in utts], texts)
            if out_dir is not None:
                write_hypotheses(
                    out_dir / f"{spec.key}-{test_set}.hyp",
                    [(u.id, h.log_prob, t) for u, h, t in zip(utts, hyps, texts)],
                )
        if out_dir is not None:
            save_checkpoint(out_dir / f"{spec.key}.ckpt", model_cfg, trained)
            (out_dir / f"{spec.key}.train.csv").write_text(report.to_csv(), encoding="utf-8")
        results.append(result)
    return results


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Run every seed; write per-seed tables, the combined median table and a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "experiment.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    manifest = {
        "config_hash": cfg.digest,
        "seeds": list(cfg.seeds),
        "runs": [{**asdict(r), "label": r.label, "key": r.key} for r in cfg.runs],
        "files": {"config": "experiment.json", "seeds": {}},
    }
    per_seed = []
    for seed in cfg.seeds:
        seed_dir = out_dir / f"seed{seed}"
        results = run_seed(cfg, seed, seed_dir)
        per_seed.append(results)
        files = write_tables(metric_table(results), seed_dir, "table")
        files["counts"] = seed_dir / "counts.csv"
        files["counts"].write_text(counts_table(results), encoding="utf-8")
        # every artifact in the seed directory comes from this seed and config
        meta = {"config_hash": cfg.digest, "seed": seed, "artifacts": sorted(p.name for p in seed_dir.iterdir())}
        (seed_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        manifest["files"]["seeds"][str(seed)] = {
            "dir": seed_dir.name,
            **{k: str(v.relative_to(out_dir)) for k, v in files.items()},
        }
    combined = write_tables(median_table(per_seed), out_dir, "table")
    manifest["files"].update({k: v.name for k, v in combined.items()})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
