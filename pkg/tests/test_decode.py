import itertools

import numpy as np
import pytest

from anchorasr.corpus import AnchoredUtterance
from anchorasr.decode import (
    Hypothesis,
    beam_search,
    greedy_decode,
    greedy_decode_batch,
    read_hypotheses,
    rescore,
    search,
    write_hypotheses,
)
from anchorasr.model import VARIANTS, ConvSpec, desk_config, init_params

EOS, A, B = 0, 1, 2


class TableState:
    """Prefix-keyed lookup table standing in for a decoder."""

    def __init__(self, prefixes, table):
        self.prefixes, self.table = prefixes, table

    def take(self, rows):
        return TableState([self.prefixes[r] for r in rows], self.table)


def table_step(state, y_prev):
    prefixes = [p if y == -1 else p + (int(y),) for p, y in zip(state.prefixes, y_prev)]
    logp = np.log(np.array([state.table[p] for p in prefixes]))
    return TableState(prefixes, state.table), logp


TOY = {
    (): [1e-12, 0.6, 0.4],
    (A,): [0.4, 0.3, 0.3],
    (B,): [0.9, 0.05, 0.05],
}


def run_toy(beam):
    # the start symbol is not part of any prefix
    return search(table_step, TableState([()], TOY), -1, EOS, beam, 2)


def test_two_step_toy_distribution():
    greedy = run_toy(1)[0]
    assert greedy.tokens == (A, EOS)
    assert greedy.log_prob == pytest.approx(np.log(0.24))
    best = run_toy(2)[0]
    assert best.tokens == (B, EOS)
    assert best.log_prob == pytest.approx(np.log(0.36))


def test_search_validates_arguments():
    with pytest.raises(ValueError):
        run_toy(0)
    with pytest.raises(ValueError):
        search(table_step, TableState([()], TOY), -1, EOS, 1, 0)


def test_hypothesis_surface_form():
    h = Hypothesis((4, 3, 2), -1.0, True)
    assert h.symbols == (4, 3) and h.ended
    assert Hypothesis((4,), -1.0, True).symbols == (4,)


def tiny_cfg(variant, graphemes="abc"):
    return desk_config(
        variant,
        feat_dim=4,
        conv=(ConvSpec(2),),
        s_conv=(ConvSpec(2),),
        encoder_units=4,
        attention_dim=4,
        decoder_units=4,
        embedding_dim=3,
        s_recurrent_units=3 if variant == "mask_based" else 0,
        graphemes=graphemes,
        init_scale=1.0,
    )


def random_sample(rng, frames=6):
    return AnchoredUtterance("s", rng.normal(size=(5, 4)), rng.normal(size=(frames, 4)), "")


def exhaustive_best(params, cfg, sample, max_len):
    vocab = cfg.vocab
    grapheme_ids = [vocab.eos_id + 1 + k for k in range(len(cfg.graphemes))]
    candidates = []
    for n in range(max_len):
        for body in itertools.product(grapheme_ids, repeat=n):
            candidates.append(tuple(body) + (vocab.eos_id,))
    candidates.extend(itertools.product(grapheme_ids, repeat=max_len))
    scored = [(rescore(params, cfg, sample, c), c) for c in candidates]
    return max(scored, key=lambda x: x[0])


@pytest.mark.parametrize("seed", range(50))
def test_beam_matches_exhaustive_argmax(seed):
    rng = np.random.default_rng(seed)
    variant = VARIANTS[seed % 3]
    cfg = tiny_cfg(variant)
    params = init_params(cfg, seed)
    if "g" in params:
        params["g"].data[:] = rng.normal()
    sample = random_sample(rng)
    max_len = 1 + seed % 4
    emittable = 1 + len(cfg.graphemes)
    top = beam_search(params, cfg, sample, beam_size=emittable**max_len, max_len=max_len)[0]
    best_lp, best_tokens = exhaustive_best(params, cfg, sample, max_len)
    assert top.tokens == best_tokens
    assert top.log_prob == pytest.approx(best_lp, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_greedy_equals_beam_one(seed):
    rng = np.random.default_rng(100 + seed)
    cfg = tiny_cfg(VARIANTS[seed % 3])
    params = init_params(cfg, seed)
    sample = random_sample(rng, 8)
    g = greedy_decode(params, cfg, sample)
    b = beam_search(params, cfg, sample, beam_size=1)[0]
    assert g == b
    [batched] = greedy_decode_batch(params, cfg, [sample])
    assert batched.tokens == g.tokens
    assert batched.log_prob == pytest.approx(g.log_prob, abs=1e-9)


def test_greedy_batch_matches_single():
    rng = np.random.default_rng(7)
    cfg = tiny_cfg("mask_based")
    params = init_params(cfg, 3)
    params["g"].data[:] = 0.7
    samples = [random_sample(rng, n) for n in (3, 9, 6, 12)]
    batched = greedy_decode_batch(params, cfg, samples)
    for s, h in zip(samples, batched):
        single = greedy_decode(params, cfg, s)
        assert h.tokens == single.tokens
        assert h.log_prob == pytest.approx(single.log_prob, abs=1e-9)


def test_max_len_one_and_determinism():
    rng = np.random.default_rng(1)
    cfg = tiny_cfg("baseline")
    params = init_params(cfg, 1)
    sample = random_sample(rng)
    h = greedy_decode(params, cfg, sample, max_len=1)
    assert len(h.tokens) <= 1
    assert greedy_decode(params, cfg, sample) == greedy_decode(params, cfg, sample)


@pytest.mark.parametrize("seed", range(10))
def test_returned_scores_match_rescoring(seed):
    rng = np.random.default_rng(200 + seed)
    cfg = tiny_cfg(VARIANTS[seed % 3])
    params = init_params(cfg, seed)
    sample = random_sample(rng, 8)
    for h in beam_search(params, cfg, sample, beam_size=4, max_len=5):
        assert h.log_prob == pytest.approx(rescore(params, cfg, sample, h.tokens), abs=1e-9)
        assert h.finished == (h.ended or len(h.tokens) >= 5)


@pytest.mark.parametrize("seed", range(20))
def test_top1_score_non_decreasing_in_beam(seed):
    rng = np.random.default_rng(300 + seed)
    cfg = tiny_cfg(VARIANTS[seed % 3])
    params = init_params(cfg, seed)
    sample = random_sample(rng, 8)
    tops = [beam_search(params, cfg, sample, beam_size=k, max_len=4)[0].log_prob for k in (1, 2, 4, 8)]
    assert all(b >= a - 1e-12 for a, b in zip(tops, tops[1:]))


def test_hypothesis_file_round_trip(tmp_path):
    records = [("u1", -1.25, "a b"), ("u2", -0.1, "")]
    path = tmp_path / "hyp.tsv"
    write_hypotheses(path, records)
    assert read_hypotheses(path) == records
    assert path.read_text().splitlines()[1] == "u2\t-0.1\t"
