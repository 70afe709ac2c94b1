import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorasr.augment import (
    DEFAULT_MIX,
    MixSpec,
    assignment_counts,
    downsample_mask,
    largest_remainder,
    mix_corpus,
    synth_method1,
    synth_method2,
)
from anchorasr.corpus import AnchoredUtterance, ToyCorpusConfig, gen_toy_corpus


def utt(uid, n_body, text="ab", dim=3, seed=0):
    rng = np.random.default_rng(seed)
    return AnchoredUtterance(uid, rng.normal(size=(4, dim)), rng.normal(size=(n_body, dim)), text)


def runs(mask):
    """Run-length encoding as (label, length) pairs."""
    out = []
    for v in mask:
        if out and out[-1][0] == v:
            out[-1][1] += 1
        else:
            out.append([int(v), 1])
    return [tuple(r) for r in out]


def test_method1_example():
    a, donor = utt("a", 100, "hello"), utt("d", 80, seed=1)
    out = synth_method1(a, donor, (50, 60), seed=0, seg_len=60, position=40)
    assert len(out.body) == 160
    assert runs(out.gold_mask) == [(1, 40), (0, 60), (1, 60)]
    assert out.transcript == "hello"
    assert np.array_equal(out.anchor, a.anchor)
    assert np.array_equal(out.body[:40], a.body[:40])
    assert np.array_equal(out.body[100:], a.body[40:])


def test_method1_insert_at_end():
    a, donor = utt("a", 10), utt("d", 20, seed=1)
    out = synth_method1(a, donor, (5, 15), seg_len=5, position=10)
    assert runs(out.gold_mask) == [(1, 10), (0, 5)]


def test_method1_errors():
    a = utt("a", 10)
    with pytest.raises(ValueError):
        synth_method1(a, utt("d", 10), (5, 15))
    with pytest.raises(ValueError):
        synth_method1(a, a, (1, 2))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_method1_properties(n_body, seed):
    a, donor = utt("a", n_body, "a b"), utt("d", 30, seed=1)
    out = synth_method1(a, donor, (5, 15), seed=seed)
    s = len(out.body) - n_body
    assert 5 <= s <= 15
    assert int((out.gold_mask == 0).sum()) == s
    assert out.transcript == "a b"
    pattern = [label for label, _ in runs(out.gold_mask)]
    assert pattern in ([0], [0, 1], [1, 0], [1, 0, 1])


def test_method2_contract():
    a, donor = utt("a", 10, "xyz"), utt("d", 7, seed=3)
    out = synth_method2(a, donor)
    assert out.transcript == ""
    assert np.array_equal(out.anchor, a.anchor)
    assert np.array_equal(out.body, donor.body)
    assert out.gold_mask.tolist() == [0] * 7
    with pytest.raises(ValueError):
        synth_method2(a, a)


def test_mixspec_validation():
    assert MixSpec.parse("0.5,0.44,0.06") == DEFAULT_MIX
    with pytest.raises(ValueError):
        MixSpec(0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        MixSpec(1.2, -0.2, 0.0)


def test_largest_remainder():
    assert largest_remainder(100, DEFAULT_MIX.fractions) == [50, 44, 6]
    assert sum(largest_remainder(7, (1 / 3, 1 / 3, 1 / 3))) == 7


def test_mix_counts_default_fractions():
    corpus = gen_toy_corpus(ToyCorpusConfig(n_utts=100), 0)
    mixed = mix_corpus(corpus, DEFAULT_MIX, seed=5)
    assert assignment_counts(mixed) == (50, 44, 6)
    assert len(mixed) == len(corpus)
    assert [u.id for u in mixed] == [u.id for u in corpus]


def test_mix_identity_spec_sets_masks():
    corpus = gen_toy_corpus(ToyCorpusConfig(n_utts=10), 0)
    mixed = mix_corpus(corpus, MixSpec(1, 0, 0), seed=0)
    for a, b in zip(corpus, mixed):
        assert np.array_equal(a.body, b.body) and a.transcript == b.transcript
        assert b.gold_mask.all()


def test_mix_deterministic_and_seed_sensitive():
    corpus = gen_toy_corpus(ToyCorpusConfig(n_utts=30), 0)
    a = mix_corpus(corpus, DEFAULT_MIX, seed=1)
    assert a == mix_corpus(corpus, DEFAULT_MIX, seed=1)
    assert a != mix_corpus(corpus, DEFAULT_MIX, seed=2)


def test_mix_needs_two_utterances():
    with pytest.raises(ValueError):
        mix_corpus([utt("a", 20)], DEFAULT_MIX)


def test_downsample_examples():
    assert downsample_mask([1, 1, 0, 0, 1, 1], 2).tolist() == [1, 0, 1]
    assert downsample_mask([1, 0], 2).tolist() == [0]
    assert downsample_mask([1, 0, 1], 1).tolist() == [1, 0, 1]
    # partial last window votes over its own frames
    assert downsample_mask([0, 0, 1], 2).tolist() == [0, 1]
    with pytest.raises(ValueError):
        downsample_mask([1], 0)


@given(st.integers(1, 50), st.integers(1, 8), st.integers(0, 1))
def test_downsample_constant_masks(n, factor, value):
    out = downsample_mask([value] * n, factor)
    assert len(out) == -(-n // factor)
    assert set(out.tolist()) == {value}
