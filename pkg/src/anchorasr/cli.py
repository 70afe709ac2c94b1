"""``anchorasr`` command line: corpus generation through scoring and full experiments."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .augment import DEFAULT_SEG_LEN_RANGE, MixSpec, mix_corpus
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import CorpusFormatError, ToyCorpusConfig, gen_toy_corpus, read_corpus, write_corpus
from .decode import beam_search, read_hypotheses, write_hypotheses
from .evaluation import Metrics, ScoreRow, corpus_counts, score_table_csv, werr
from .model import VARIANTS, desk_config, init_params
from .train import TrainConfig, TrainingDivergedError, evaluate_dev, fit

log = logging.getLogger("anchorasr")

EXIT_MISSING = 3
EXIT_CONFIG = 4
EXIT_DIVERGED = 5


class MissingFileError(Exception):
    pass


class BadConfigError(Exception):
    pass


def _variant(text: str) -> str:
    v = text.replace("-", "_")
    if v not in VARIANTS:
        raise argparse.ArgumentTypeError(f"choose from {', '.join(x.replace('_', '-') for x in VARIANTS)}")
    return v


def _pair(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected two integers 'lo,hi'") from exc
    return lo, hi


def _mix(text: str) -> MixSpec:
    try:
        return MixSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"missing file: {p}")
    return p


def _read_text(path) -> str:
    return _existing(path).read_text(encoding="utf-8")


def _digest(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()[:16]


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_meta(artifact: Path, command: str, seed: int | None, config_text: str, inputs=()) -> Path:
    """Sidecar ``<artifact>.meta.json``: what produced the artifact and from what."""
    meta = {
        "artifact": artifact.name,
        "command": command,
        "config_hash": _digest(config_text),
        "inputs": {str(p): _file_digest(p) for p in inputs},
        "seed": seed,
        "version": __version__,
    }
    path = artifact.with_name(artifact.name + ".meta.json")
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _corpus(path):
    return read_corpus(_existing(path))


def _model_config(args):
    overrides = {}
    if args.model_config:
        try:
            overrides = json.loads(_read_text(args.model_config))
        except json.JSONDecodeError as exc:
            raise BadConfigError(f"{args.model_config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise BadConfigError(f"{args.model_config}: expected a JSON object")
    try:
        return desk_config(args.variant, **overrides)
    except (TypeError, ValueError) as exc:
        raise BadConfigError(f"model config: {exc}") from exc


# -- subcommands -------------------------------------------------------------------


def cmd_gen_corpus(args) -> None:
    try:
        cfg = ToyCorpusConfig.from_json(_read_text(args.config)) if args.config else ToyCorpusConfig()
        if args.n_utts is not None:
            cfg = replace(cfg, n_utts=args.n_utts)
        corpus = gen_toy_corpus(cfg, args.seed)
    except (TypeError, ValueError) as exc:
        raise BadConfigError(f"corpus config: {exc}") from exc
    write_corpus(corpus, args.out)
    write_meta(args.out, "gen-corpus", args.seed, cfg.to_json())


def cmd_augment(args) -> None:
    corpus = _corpus(args.corpus)
    try:
        mixed = mix_corpus(corpus, args.mix, args.seg_len, args.seed)
    except ValueError as exc:
        raise BadConfigError(str(exc)) from exc
    write_corpus(mixed, args.out)
    write_meta(args.out, "augment", args.seed, f"{args.mix}|{args.seg_len}", [args.corpus])


def cmd_train(args) -> None:
    try:
        tc = TrainConfig.from_text(_read_text(args.config)) if args.config else TrainConfig()
        tc = replace(tc, seed=args.seed, lam=tc.lam if args.lam is None else args.lam)
    except ValueError as exc:
        raise BadConfigError(f"train config: {exc}") from exc
    model_cfg = _model_config(args)
    corpus = _corpus(args.corpus)
    dev = _corpus(args.dev) if args.dev else None
    params = init_params(model_cfg, args.seed)
    try:
        trained, report = fit(params, model_cfg, corpus, tc, dev, log=lambda r: log.info("%s", r))
    except ValueError as exc:
        raise BadConfigError(str(exc)) from exc
    save_checkpoint(args.out, model_cfg, trained)
    report_path = args.report or args.out.with_name(args.out.name + ".report.csv")
    report_path.write_text(report.to_csv(), encoding="utf-8")
    inputs = [args.corpus] + ([args.dev] if args.dev else [])
    config_text = model_cfg.to_text() + "\n" + tc.to_text()
    for artifact in (args.out, report_path):
        write_meta(artifact, "train", args.seed, config_text, inputs)


def cmd_decode(args) -> None:
    cfg, params = load_checkpoint(_existing(args.checkpoint))
    corpus = _corpus(args.corpus)
    records = []
    for u in corpus:
        h = beam_search(params, cfg, u, beam_size=args.beam)[0]
        records.append((u.id, h.log_prob, h.text(cfg.vocab)))
    write_hypotheses(args.out, records)
    write_meta(args.out, "decode", None, f"beam={args.beam}", [args.checkpoint, args.corpus])


def _counts_for(refs: dict[str, str], hyp_path):
    hyps = {uid: text for uid, _, text in read_hypotheses(_existing(hyp_path))}
    missing = sorted(set(refs) - set(hyps))
    if missing:
        raise BadConfigError(f"{hyp_path}: no hypothesis for {len(missing)} utterances (e.g. {missing[0]})")
    return corpus_counts([refs[k] for k in refs], [hyps[k] for k in refs])


def cmd_score(args) -> None:
    """One score row per hypothesis file, with WERR against the baseline file."""
    refs = {u.id: u.transcript for u in _corpus(args.corpus)}
    base_wer = None
    if args.baseline:
        base_wer = Metrics.from_counts(_counts_for(refs, args.baseline)).wer
    rows = []
    for hyp in args.hyp:
        m = Metrics.from_counts(_counts_for(refs, hyp))
        w = werr(base_wer, m.wer) if base_wer else None
        rows.append(ScoreRow(Path(hyp).stem, args.training_set, args.test_set, m, w))
    args.out.write_text(score_table_csv(rows), encoding="utf-8")
    inputs = [args.corpus, *args.hyp] + ([args.baseline] if args.baseline else [])
    write_meta(args.out, "score", None, f"{args.training_set}|{args.test_set}", inputs)


def cmd_mask_eval(args) -> None:
    cfg, params = load_checkpoint(_existing(args.checkpoint))
    if cfg.variant != "mask_based":
        raise BadConfigError(f"{args.checkpoint}: variant {cfg.variant} has no frame mask")
    corpus = _corpus(args.corpus)
    if not any(u.gold_mask is not None for u in corpus):
        raise BadConfigError(f"{args.corpus}: no gold masks")
    _, loss, r0, r1 = evaluate_dev(params, cfg, corpus, TrainConfig(), decode=False)
    fmt = lambda x: "" if x is None else repr(float(x))  # noqa: E731
    args.out.write_text(f"mask_loss,recall0,recall1\n{fmt(loss)},{fmt(r0)},{fmt(r1)}\n", encoding="utf-8")
    write_meta(args.out, "mask-eval", None, "", [args.checkpoint, args.corpus])


def cmd_grad_check(args) -> None:
    from .diagnostics import model_grad_check

    lines = ["variant\tseed\tparam\tchecked\tmax_rel_error\tanalytic\tnumeric"]
    verdicts = []
    for variant in [args.variant] if args.variant else list(VARIANTS):
        report = model_grad_check(variant, args.seed, epsilon=args.epsilon)
        for p in report.params:
            lines.append(
                f"{variant}\t{args.seed}\t{p.name}\t{p.checked}\t{p.max_rel_error:.3e}\t{p.analytic:.6e}\t{p.numeric:.6e}"
            )
        verdicts.append(f"# {variant}: max_rel_error {report.max_rel_error:.3e} {'PASS' if report.passed else 'FAIL'}")
    args.out.write_text("\n".join(lines + verdicts) + "\n", encoding="utf-8")
    write_meta(args.out, "grad-check", args.seed, f"eps={args.epsilon}|{args.variant}")
    for v in verdicts:
        print(v[2:])


def cmd_experiment(args) -> None:
    from .experiment import ExperimentConfig, run_experiment

    try:
        cfg = ExperimentConfig.from_json(_read_text(args.config)) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = replace(cfg, seeds=(args.seed,))
        if args.mix is not None:
            cfg = replace(cfg, mix=args.mix)
        if args.beam is not None:
            cfg = replace(cfg, beam=args.beam)
    except (TypeError, ValueError, json.JSONDecodeError) as exc:
        raise BadConfigError(f"experiment config: {exc}") from exc
    try:
        manifest = run_experiment(cfg, args.out)
    except ValueError as exc:
        raise BadConfigError(str(exc)) from exc
    print(args.out / manifest["files"]["table"])


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchorasr", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a toy corpus")
    p.add_argument("--config", type=Path, help="JSON corpus config (defaults if omitted)")
    p.add_argument("--n-utts", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("augment", help="mix in synthetic interfering speech")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--mix", type=_mix, default=MixSpec.parse("0.5,0.44,0.06"))
    p.add_argument("--seg-len", type=_pair, default=DEFAULT_SEG_LEN_RANGE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--dev", type=Path)
    p.add_argument("--config", type=Path, help="key = value training config")
    p.add_argument("--model-config", type=Path, help="JSON overrides of the desk topology")
    p.add_argument("--variant", type=_variant, default="baseline")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="beam-search decode a corpus")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--beam", type=int, default=15)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="WER table for hypothesis files")
    p.add_argument("--corpus", type=Path, required=True, help="corpus with reference transcripts")
    p.add_argument("--hyp", type=Path, nargs="+", required=True)
    p.add_argument("--baseline", type=Path, help="hypothesis file of the reference system")
    p.add_argument("--training-set", default="")
    p.add_argument("--test-set", default="")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("mask-eval", help="frame-mask recall on a corpus with gold masks")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_mask_eval)

    p = sub.add_parser("grad-check", help="finite-difference check of model gradients")
    p.add_argument("--variant", type=_variant)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("experiment", help="model x training data x test set comparison")
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="run this seed only")
    p.add_argument("--mix", type=_mix)
    p.add_argument("--beam", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except MissingFileError as exc:
        print(f"anchorasr: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (BadConfigError, CorpusFormatError) as exc:
        print(f"anchorasr: bad config or input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"anchorasr: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return 0


if __name__ == "__main__":
    sys.exit(main())
