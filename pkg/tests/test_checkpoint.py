import numpy as np
import pytest

from anchorasr.checkpoint import (
    ParameterMismatchError,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    load_checkpoint,
    save_checkpoint,
)
from anchorasr.corpus import BadMagicError, TruncatedPayloadError, VersionMismatchError
from anchorasr.model import VARIANTS, desk_config, init_params


@pytest.mark.parametrize("variant", VARIANTS)
def test_round_trip_is_byte_exact(variant, tmp_path):
    cfg = desk_config(variant)
    params = init_params(cfg, 5)
    params["out.b"].data[0] = -0.0
    params["out.b"].data[1] = 1e-300
    blob = checkpoint_to_bytes(cfg, params)
    cfg2, params2 = checkpoint_from_bytes(blob)
    assert cfg2 == cfg
    assert set(params2) == set(params)
    for k in params:
        assert params2[k].data.tobytes() == params[k].data.tobytes()
    assert checkpoint_to_bytes(cfg2, params2) == blob
    save_checkpoint(tmp_path / "m.ckpt", cfg, params)
    assert (tmp_path / "m.ckpt").read_bytes() == blob
    assert checkpoint_to_bytes(*load_checkpoint(tmp_path / "m.ckpt")) == blob


def test_insertion_order_does_not_matter():
    cfg = desk_config("baseline")
    params = init_params(cfg, 0)
    reordered = dict(reversed(list(params.items())))
    assert checkpoint_to_bytes(cfg, reordered) == checkpoint_to_bytes(cfg, params)


def test_corrupt_checkpoints_are_rejected():
    cfg = desk_config("baseline")
    blob = checkpoint_to_bytes(cfg, init_params(cfg, 0))
    with pytest.raises(BadMagicError):
        checkpoint_from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(VersionMismatchError):
        checkpoint_from_bytes(blob[:4] + (7).to_bytes(4, "little") + blob[8:])
    with pytest.raises(TruncatedPayloadError):
        checkpoint_from_bytes(blob[:-3])
    with pytest.raises(TruncatedPayloadError):
        checkpoint_from_bytes(blob + b"\0")


def test_parameters_must_match_config():
    cfg = desk_config("multi_source")
    params = {k: v.data for k, v in init_params(cfg, 0).items()}
    with pytest.raises(ParameterMismatchError):
        checkpoint_from_bytes(checkpoint_to_bytes(desk_config("baseline"), params))
    params["g"] = np.zeros(2)
    with pytest.raises(ParameterMismatchError):
        checkpoint_from_bytes(checkpoint_to_bytes(cfg, params))
