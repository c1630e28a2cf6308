import numpy as np
import pytest

from seqrec.autodiff import Parameter
from seqrec.checkpoint import load_checkpoint, save_checkpoint
from seqrec.model import ModelConfig, TemporalMixtureModel


def test_round_trip_preserves_values_and_header(tmp_path):
    rng = np.random.default_rng(0)
    params = [Parameter("alpha", rng.normal(size=(3, 4))),
              Parameter("beta", rng.normal(size=7)),
              Parameter("gamma.w", rng.normal(size=(2, 2, 2)))]
    header = {"seed": 3, "note": "round trip"}
    path = save_checkpoint(tmp_path / "ckpt", params, header)
    got_header, state = load_checkpoint(path)
    assert got_header == header
    assert set(state) == {"alpha", "beta", "gamma.w"}
    for p in params:
        assert np.array_equal(state[p.name], p.value.data)


def test_manifest_is_plain_text_with_offsets(tmp_path):
    params = [Parameter("a", np.arange(6.0).reshape(2, 3)),
              Parameter("b", np.array([9.0]))]
    path = save_checkpoint(tmp_path / "ckpt", params, {})
    raw = path.read_bytes()
    text = raw[:raw.index(b"payload")].decode("utf-8")
    lines = text.splitlines()
    assert lines[0] == "seqrec-checkpoint v1"
    assert "param a 2,3 0" in lines
    assert "param b 1 48" in lines  # 6 float64 values = 48 bytes before b

    # payload is raw little-endian float64 at the declared offsets
    payload_start = raw.index(b"\n", raw.index(b"payload")) + 1
    a = np.frombuffer(raw, dtype="<f8", count=6, offset=payload_start)
    assert np.array_equal(a.reshape(2, 3), params[0].value.data)


def test_duplicate_parameter_names_rejected(tmp_path):
    params = [Parameter("x", np.ones(2)), Parameter("x", np.ones(3))]
    with pytest.raises(ValueError, match="duplicate"):
        save_checkpoint(tmp_path / "ckpt", params, {})


def test_loading_garbage_fails(tmp_path):
    bad = tmp_path / "model.ckpt"
    bad.write_bytes(b"not a checkpoint\npayload 0\n")
    with pytest.raises(ValueError, match="not a seqrec checkpoint"):
        load_checkpoint(bad)


def test_model_checkpoint_is_self_describing(tmp_path):
    cfg = ModelConfig(num_items=15, hidden=8, num_layers=1,
                      head_kinds=("day", "exp"), max_len=6, dropout=0.0,
                      num_days=9, t_min=1000)
    model = TemporalMixtureModel(cfg, np.random.default_rng(1))
    header = {"model": cfg.to_dict(), "combo": "day+exp"}
    save_checkpoint(tmp_path / "ckpt", model.parameters(), header)

    got_header, state = load_checkpoint(tmp_path / "ckpt")
    rebuilt_cfg = ModelConfig.from_dict(got_header["model"])
    assert rebuilt_cfg == cfg
    rebuilt = TemporalMixtureModel(rebuilt_cfg, np.random.default_rng(99))
    rebuilt.load_state(state)

    rng = np.random.default_rng(2)
    items = rng.integers(1, 16, size=(2, 6))
    times = np.sort(rng.integers(1000, 10**6, size=(2, 6)), axis=-1)
    _, a = model.forward(items, times)
    _, b = rebuilt.forward(items, times)
    assert np.array_equal(a.data, b.data)


def test_load_state_shape_mismatch(tmp_path):
    cfg = ModelConfig(num_items=5, hidden=8, num_layers=1,
                      head_kinds=("pos", "sin"), max_len=4, dropout=0.0)
    model = TemporalMixtureModel(cfg, np.random.default_rng(0))
    state = model.state_dict()
    state["pred_w"] = np.zeros((2, 2))
    with pytest.raises(ValueError, match="shape mismatch"):
        model.load_state(state)
