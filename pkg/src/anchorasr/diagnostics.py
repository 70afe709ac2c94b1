"""Finite-difference check of the full model objective."""
from __future__ import annotations

import numpy as np

from .augment import synth_method1
from .corpus import AnchoredUtterance
from .model import ConvSpec, desk_config, init_params, make_batch
from .numerics import GradCheckReport, grad_check
from .train import TrainConfig, batch_objective

GRAPHEMES = "ab "


def check_config(variant: str):
    """Smallest topology that still exercises every layer type of ``variant``."""
    return desk_config(
        variant,
        feat_dim=4,
        conv=(ConvSpec(1),),
        s_conv=(ConvSpec(1),),
        encoder_units=2,
        attention_dim=2,
        decoder_units=2,
        embedding_dim=2,
        s_recurrent_units=2 if variant == "mask_based" else 0,
        graphemes=GRAPHEMES,
        init_scale=1.0,
    )


def check_sample(seed: int, feat_dim: int = 4) -> AnchoredUtterance:
    """Random utterance with a 3-8 frame body; it carries a gold mask."""
    rng = np.random.default_rng([seed, 11])
    n_body = int(rng.integers(2, 7))
    text = "".join(rng.choice(list("ab"), size=int(rng.integers(1, 3))))
    utt = AnchoredUtterance("check", rng.normal(size=(3, feat_dim)), rng.normal(size=(n_body, feat_dim)), text)
    donor = AnchoredUtterance("donor", rng.normal(size=(3, feat_dim)), rng.normal(size=(4, feat_dim)), "")
    # 2-6 own frames plus 1-2 spliced foreign frames
    return synth_method1(utt, donor, (1, 2), seed=seed)


def model_grad_check(
    variant: str, seed: int = 0, gain: float = 0.5, epsilon: float = 1e-5, tolerance: float = 1e-4,
    resolution: float = 0.0,
) -> GradCheckReport:
    """Check tape gradients of the training objective for one random sample.

    ``mask_based`` uses lambda = 0.5 so both loss terms are covered.
    """
    cfg = check_config(variant)
    params = init_params(cfg, seed)
    if "g" in params:
        params["g"].data[:] = gain
    utt = check_sample(seed, cfg.feat_dim)
    batch = make_batch([utt], cfg.vocab, cfg.time_stride)
    tc = TrainConfig(lam=0.5 if variant == "mask_based" else 0.0)

    def loss(P):
        return batch_objective(P, cfg, batch, tc).total

    return grad_check(loss, params, epsilon=epsilon, tolerance=tolerance, resolution=resolution)
