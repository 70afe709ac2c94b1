"""Acceptance suite: one verdict line per criterion (see the terminal summary).

Criteria 8 and 9 train models and take a long time; they carry the ``slow``
marker so ``pytest -m "not slow"`` skips them.
"""
import itertools
import math
import statistics
from pathlib import Path

import numpy as np
import pytest

from anchorasr.augment import DEFAULT_MIX, assignment_counts, mix_corpus, synth_method1, synth_method2
from anchorasr.checkpoint import checkpoint_from_bytes, checkpoint_to_bytes
from anchorasr.corpus import AnchoredUtterance, ToyCorpusConfig, corpus_from_bytes, corpus_to_bytes, gen_toy_corpus
from anchorasr.decode import beam_search, greedy_decode, rescore
from anchorasr.diagnostics import model_grad_check
from anchorasr.evaluation import Metrics, align, normalize_report, werr
from anchorasr.experiment import AUGMENTED, DEVICE_ONLY, HARD, NORMAL, ExperimentConfig, run_experiment
from anchorasr.model import VARIANTS, ConvSpec, desk_config, forward, init_params, param_shapes
from anchorasr.numerics import fd_resolution
from anchorasr.train import TrainConfig, evaluate_dev, fit, mask_loss, total_loss, asr_loss


# -- 1, 2: table arithmetic -----------------------------------------------------------


def test_c01_werr_arithmetic(criterion):
    cases = [(3.354, 2.854, 14.9), (3.354, 2.931, 12.6), (1.000, 3.215, -221.5)]
    got = [werr(b, s) for b, s, _ in cases]
    ok = all(abs(g - e) <= 0.05 and round(g, 1) == e for g, (_, _, e) in zip(got, cases))
    criterion(1, ok, "WERR " + ", ".join(f"{g:+.2f}%" for g in got))
    assert ok


def test_c02_normalization_rule(criterion):
    rep = normalize_report({"normal": Metrics(0.05, 0, 0, 0), "hard": Metrics(0.25, 0, 0, 0)}, 0.05)
    got = (rep.rows["normal"].wer, rep.rows["hard"].wer)
    ok = got == (1.0, 5.0)
    criterion(2, ok, f"5.0% -> {got[0]:.3f}, 25.0% -> {got[1]:.3f}")
    assert ok


# -- 3, 4: model identities and gradients ----------------------------------------------


def _small(variant):
    return desk_config(
        variant, feat_dim=4, conv=(ConvSpec(2),), s_conv=(ConvSpec(2),), encoder_units=3,
        attention_dim=3, decoder_units=3, embedding_dim=2, graphemes="ab ", init_scale=0.5,
        s_recurrent_units=2 if variant == "mask_based" else 0,
    )


def _random_utt(rng):
    text = " ".join("".join(rng.choice(list("ab"), size=int(k))) for k in rng.integers(1, 3, size=int(rng.integers(0, 3))))
    return AnchoredUtterance("r", rng.normal(size=(int(rng.integers(3, 8)), 4)), rng.normal(size=(int(rng.integers(3, 12)), 4)), text)


def test_c03_reduction_identities(criterion):
    n, ms_ok, mb_ok = 25, 0, 0
    for seed in range(n):
        rng = np.random.default_rng(seed)
        utt = _random_utt(rng)
        for variant in ("multi_source", "mask_based"):
            cfg = _small(variant)
            base = desk_config("baseline", **{k: getattr(cfg, k) for k in ("feat_dim", "conv", "encoder_units", "attention_dim", "decoder_units", "embedding_dim", "graphemes")})
            P = init_params(cfg, seed)
            tgt = cfg.vocab.targets(utt.transcript)
            if variant == "multi_source":
                P["g"].data[:] = 0.0
                got = forward(P, cfg, utt, tgt).logits.data
            else:
                P["g"].data[:] = rng.normal()
                got = forward(P, cfg, utt, tgt, force_phi=1.0).logits.data
            shared = {k: P[k] for k in param_shapes(base)}
            ref = forward(shared, base, utt, tgt).logits.data
            if np.array_equal(got, ref):
                if variant == "multi_source":
                    ms_ok += 1
                else:
                    mb_ok += 1
    ok = ms_ok == n and mb_ok == n
    criterion(3, ok, f"exact logits: multi_source(g=0) {ms_ok}/{n}, mask_based(phi=1) {mb_ok}/{n}")
    assert ok


# pre-declared check points: seeds 0-4 for every variant
GRAD_SEEDS = range(5)


def test_c04_gradient_verification(criterion):
    worst, failures, explained = 0.0, [], 0
    # rounding floor of two O(1) loss evaluations divided by 2 * epsilon
    slack = fd_resolution(4.0, 1e-5)
    for variant in VARIANTS:
        for seed in GRAD_SEEDS:
            report = model_grad_check(variant, seed, epsilon=1e-5, tolerance=1e-4)
            worst = max(worst, report.max_rel_error)
            if not report.passed:
                failures.append(f"{variant}/{seed}")
                explained += model_grad_check(variant, seed, resolution=slack).passed
    ok = not failures
    detail = f"max relative error {worst:.2e} over {len(VARIANTS) * len(GRAD_SEEDS)} checks"
    if failures:
        detail += (
            f"; {len(failures)} points fail ({', '.join(failures)}), "
            f"{explained} of them pass once an absolute gap of {slack:.0e} (finite-difference rounding) is allowed"
        )
    criterion(4, ok, detail)
    assert ok, detail


# -- 5: alignment oracle ------------------------------------------------------------------


def _enumerate(ref, hyp):
    """Every (S, I, D) reachable by an alignment path."""
    out = set()

    def walk(i, j, s, ins, d):
        if i == len(ref) and j == len(hyp):
            out.add((s, ins, d))
            return
        if i < len(ref):
            walk(i + 1, j, s, ins, d + 1)
        if j < len(hyp):
            walk(i, j + 1, s, ins + 1, d)
        if i < len(ref) and j < len(hyp):
            walk(i + 1, j + 1, s + (ref[i] != hyp[j]), ins, d)

    walk(0, 0, 0, 0, 0)
    return out


def _agrees(ref, hyp):
    paths = _enumerate(tuple(ref), tuple(hyp))
    best = min(sum(p) for p in paths)
    c = align(list(ref), list(hyp))
    return c.errors == best and (c.substitutions, c.insertions, c.deletions) in paths and c.ref_len == len(ref)


def test_c05_alignment_matches_brute_force(criterion):
    words = ("x", "y", "z")
    exhaustive = [
        (r, h)
        for n in range(5)
        for m in range(5)
        for r in itertools.product(words, repeat=n)
        for h in itertools.product(words, repeat=m)
    ]
    rng = np.random.default_rng(0)
    random_pairs = [
        (tuple(rng.choice(words, size=int(rng.integers(0, 7)))), tuple(rng.choice(words, size=int(rng.integers(0, 7)))))
        for _ in range(1000)
    ]
    bad = [p for p in exhaustive + random_pairs if not _agrees(*p)]
    ok = not bad
    criterion(5, ok, f"{len(exhaustive)} enumerated + {len(random_pairs)} random pairs, {len(bad)} disagreements")
    assert ok


# -- 6: beam search optimality --------------------------------------------------------------


def _tiny_decoder(variant):
    return desk_config(
        variant, feat_dim=4, conv=(ConvSpec(2),), s_conv=(ConvSpec(2),), encoder_units=4,
        attention_dim=4, decoder_units=4, embedding_dim=3, graphemes="abc", init_scale=1.0,
        s_recurrent_units=3 if variant == "mask_based" else 0,
    )


def test_c06_beam_search_optimality(criterion):
    n, optimal, greedy_same = 60, 0, 0
    for seed in range(n):
        rng = np.random.default_rng(1000 + seed)
        cfg = _tiny_decoder(VARIANTS[seed % 3])
        P = init_params(cfg, seed)
        if "g" in P:
            P["g"].data[:] = rng.normal()
        utt = AnchoredUtterance("s", rng.normal(size=(5, 4)), rng.normal(size=(int(rng.integers(3, 9)), 4)), "")
        max_len = 1 + seed % 4
        graphemes = [cfg.vocab.eos_id + 1 + k for k in range(len(cfg.graphemes))]
        V = len(graphemes) + 1  # emittable symbols incl. end-of-sequence
        candidates = [tuple(b) + (cfg.vocab.eos_id,) for k in range(max_len) for b in itertools.product(graphemes, repeat=k)]
        candidates += list(itertools.product(graphemes, repeat=max_len))
        best = max(candidates, key=lambda c: rescore(P, cfg, utt, c))
        top = beam_search(P, cfg, utt, beam_size=V**max_len, max_len=max_len)[0]
        optimal += top.tokens == best
        greedy_same += greedy_decode(P, cfg, utt) == beam_search(P, cfg, utt, beam_size=1)[0]
    ok = optimal == n and greedy_same == n
    criterion(6, ok, f"top-1 = exhaustive argmax {optimal}/{n}; beam 1 = greedy {greedy_same}/{n}")
    assert ok


# -- 7: synthetic data contracts --------------------------------------------------------------


def _runs(mask):
    return [k for k, _ in itertools.groupby(mask.tolist())]


def test_c07_synthetic_data_contracts(criterion):
    corpus = gen_toy_corpus(ToyCorpusConfig(n_utts=100), 0)
    m1_ok = m2_ok = 0
    long_enough = [u for u in corpus if len(u.body) >= 15]
    for i, utt in enumerate(corpus):
        donor = next(d for d in long_enough[i % len(long_enough):] + long_enough if d is not utt)
        a = synth_method1(utt, donor, (5, 15), seed=i)
        m1_ok += a.transcript == utt.transcript and _runs(a.gold_mask) in ([1, 0, 1], [0, 1], [1, 0], [0])
        b = synth_method2(utt, donor)
        m2_ok += b.transcript == "" and not b.gold_mask.any()
    counts = assignment_counts(mix_corpus(corpus, DEFAULT_MIX, seed=0))
    ok = m1_ok == 100 and m2_ok == 100 and counts == (50, 44, 6)
    criterion(7, ok, f"method 1 {m1_ok}/100, method 2 {m2_ok}/100, mix counts {counts}")
    assert ok


# -- 8: mask learnability -----------------------------------------------------------------------


@pytest.mark.slow
def test_c08_mask_learnability(criterion):
    allc = gen_toy_corpus(ToyCorpusConfig(n_utts=2600, speakers=8), seed=1)
    train = mix_corpus(allc[:2000], DEFAULT_MIX, seed=1)
    dev = mix_corpus(allc[2000:2300], DEFAULT_MIX, seed=2)
    test = mix_corpus(allc[2300:], DEFAULT_MIX, seed=3)
    cfg = desk_config("mask_based")
    tc = TrainConfig(lam=1.0, epochs=30, lr0=0.01, decay=0.95)
    params, report = fit(init_params(cfg, 0), cfg, train, tc, dev)
    _, _, r0, r1 = evaluate_dev(params, cfg, test, tc, decode=False)
    ok = r0 >= 0.70 and r1 >= 0.90
    criterion(8, ok, f"held-out recall0 {r0:.3f} (>= 0.70), recall1 {r1:.3f} (>= 0.90), best epoch {report.best_epoch}")
    assert ok


# -- 9: table direction ------------------------------------------------------------------------


def _read_counts(path: Path) -> dict:
    rows = {}
    for line in path.read_text().splitlines()[1:]:
        model, training, test, n, s, i, d, _ = line.split(",")
        rows[(model, training, test)] = (int(n), int(s), int(i), int(d))
    return rows


def _wer(row):
    n, s, i, d = row
    return (s + i + d) / max(n, 1)


@pytest.fixture(scope="module")
def table_experiment(tmp_path_factory):
    out = tmp_path_factory.mktemp("experiment")
    cfg = ExperimentConfig()
    manifest = run_experiment(cfg, out)
    return [_read_counts(out / manifest["files"]["seeds"][str(s)]["counts"]) for s in cfg.seeds]


@pytest.mark.slow
def test_c09_table_direction(criterion, table_experiment):
    per_seed = table_experiment
    base_dd = ("baseline", DEVICE_ONLY)
    dels_dd = [t[base_dd + (NORMAL,)][3] for t in per_seed]
    dels_aug = [t[("baseline", AUGMENTED, NORMAL)][3] for t in per_seed]
    werr_hard = [werr(_wer(t[base_dd + (HARD,)]), _wer(t[("multi_source", AUGMENTED, HARD)])) for t in per_seed]
    degr_normal = [-werr(_wer(t[base_dd + (NORMAL,)]), _wer(t[("multi_source", AUGMENTED, NORMAL)])) for t in per_seed]
    gap = [
        _wer(t[("mask_based (lambda=0)", AUGMENTED, HARD)]) - _wer(t[("mask_based (lambda=0.1)", AUGMENTED, HARD)])
        for t in per_seed
    ]
    a = statistics.median(dels_aug) > statistics.median(dels_dd)
    b = statistics.median(werr_hard) >= 10.0 and statistics.median(degr_normal) <= 5.0
    c = statistics.median(gap) > 0
    detail = (
        f"(a) {'ok' if a else 'no'}: normal-set deletions aug {statistics.median(dels_aug):g} vs dd {statistics.median(dels_dd):g}; "
        f"(b) {'ok' if b else 'no'}: hard WERR {statistics.median(werr_hard):+.1f}%, normal degradation {statistics.median(degr_normal):+.1f}%; "
        f"(c) {'ok' if c else 'no'}: hard WER lambda=0 minus lambda=0.1 {statistics.median(gap):+.4f} (medians over {len(per_seed)} seeds)"
    )
    ok = a and b and c
    criterion(9, ok, detail)
    assert ok, detail


# -- 10: loss algebra --------------------------------------------------------------------------


def test_c10_loss_algebra(criterion):
    rng = np.random.default_rng(0)
    linear = all(
        total_loss(a, m, lam) == (1 - lam) * a + lam * m
        for a, m, lam in zip(rng.uniform(0, 5, 200), rng.uniform(0, 5, 200), rng.uniform(0, 1, 200))
    )
    bce_gap = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 40))
        phi, gold = rng.uniform(0.01, 0.99, n), (rng.random(n) < 0.5).astype(float)
        w = float(rng.uniform(0.1, 3))
        plain = float(np.mean(-(gold * np.log(phi) + (1 - gold) * np.log(1 - phi))))
        bce_gap = max(bce_gap, abs(mask_loss(phi, gold, (w, w)).item() - plain))
    uniform_gap = max(abs(asr_loss(np.zeros((7, V)), rng.integers(0, V, 7)).item() - math.log(V)) for V in (4, 14, 36))
    ok = linear and bce_gap < 1e-12 and uniform_gap < 1e-12
    criterion(10, ok, f"linear in lambda: {linear}; equal-weight BCE gap {bce_gap:.1e}; uniform-logit gap {uniform_gap:.1e}")
    assert ok


# -- 11: persistence -----------------------------------------------------------------------------


def test_c11_persistence(criterion, tmp_path):
    corpus = mix_corpus(gen_toy_corpus(ToyCorpusConfig(n_utts=30), 4), DEFAULT_MIX, seed=4)
    blob = corpus_to_bytes(corpus)
    corpus_ok = corpus_to_bytes(corpus_from_bytes(blob)) == blob and corpus_from_bytes(blob) == corpus
    cfg = desk_config("mask_based")
    ck = checkpoint_to_bytes(cfg, init_params(cfg, 4))
    ckpt_ok = checkpoint_to_bytes(*checkpoint_from_bytes(ck)) == ck
    tiny = ExperimentConfig(
        seeds=(3,), n_train=24, n_dev=6, n_test=6, beam=2, seg_len_range=(2, 3),
        corpus=ToyCorpusConfig(feat_dim=4, speakers=2, graphemes="ab ", transcript_len_range=(1, 3)),
        model={"encoder_units": 4, "attention_dim": 4, "decoder_units": 4, "s_recurrent_units": 3},
        train=TrainConfig(epochs=1, batch_size=8),
    )
    first = run_experiment(tiny, tmp_path / "first")
    replay = ExperimentConfig.from_json((tmp_path / "first" / first["files"]["config"]).read_text())
    run_experiment(replay, tmp_path / "replay")
    files = sorted(p.relative_to(tmp_path / "first") for p in (tmp_path / "first").rglob("*") if p.is_file())
    same = [f for f in files if (tmp_path / "first" / f).read_bytes() == (tmp_path / "replay" / f).read_bytes()]
    replay_ok = len(same) == len(files)
    ok = corpus_ok and ckpt_ok and replay_ok
    criterion(11, ok, f"corpus round trip {corpus_ok}, checkpoint round trip {ckpt_ok}, replay {len(same)}/{len(files)} files identical")
    assert ok
