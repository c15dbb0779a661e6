import math

import numpy as np
import pytest

import iadc

TINY = "\n".join(
    [
        "height = 32",
        "width = 64",
        "enc_channels = 4,4,8,8,8",
        "attn_dim = 8",
        "attn_height = 8",
        "attn_width = 16",
        "fusion_channels = 16",
        "se_reduction = 4",
        "head_mid_channels = 8",
    ]
)


def test_scene_and_sparsify_shapes():
    s = iadc.generate_scene(seed=3, height=32, width=64, objects=3)
    assert s["rgb"].shape == (3, 32, 64)
    assert s["depth"].shape == (1, 32, 64)
    assert all(m.shape == (1, 32, 64) for m in s["instances"])
    depth, valid = iadc.sparsify(s, 1.0, 0)
    np.testing.assert_array_equal(depth, np.where(s["depth"] > 0, s["depth"], 0))
    np.testing.assert_array_equal(valid, (s["depth"] > 0).astype(np.float32))


def test_merge_is_pixelwise_or():
    rng = np.random.default_rng(0)
    masks = [(rng.random((1, 6, 7)) < 0.3).astype(np.float32) for _ in range(4)]
    merged = iadc.merge_masks(masks, 6, 7)
    np.testing.assert_array_equal(merged, np.logical_or.reduce(masks).astype(np.float32))
    assert not iadc.merge_masks([], 2, 3).any()


def test_metrics_match_numpy():
    m = iadc.evaluate(np.array([1.0, 3.0, 9.0]), np.array([2.0, 1.0, 0.0]))
    assert m["n_valid"] == 2
    assert m["mae"] == pytest.approx(1.5)
    assert m["rmse"] == pytest.approx(math.sqrt(2.5))
    rng = np.random.default_rng(1)
    pred, gt = rng.random((64, 128)) * 80, rng.random((64, 128)) * 80
    gt[rng.random(gt.shape) < 0.2] = 0
    valid = gt > 0
    m = iadc.evaluate(pred, gt)
    assert m["mae"] == pytest.approx(np.abs(pred - gt)[valid].mean(), abs=1e-9)
    assert m["rmse"] == pytest.approx(np.sqrt(((pred - gt) ** 2)[valid].mean()), abs=1e-9)


def test_weighted_l1_hand_case():
    loss = iadc.masked_weighted_l1(np.array([2.0, 4.0]), np.array([1.0, 2.0]), np.array([1.0, 0.0]), 3.0)
    assert loss == pytest.approx(1.25)


def test_model_forward_shapes_and_rows():
    model = iadc.Model(TINY, seed=1)
    assert model.parameter_count() == sum(p.size for p in model.parameters().values())
    rng = np.random.default_rng(2)
    out = model.forward(
        rng.random((1, 3, 32, 64), dtype=np.float32),
        np.zeros((1, 1, 32, 64), np.float32),
        np.zeros((1, 1, 32, 64), np.float32),
        (rng.random((1, 1, 32, 64)) > 0.5).astype(np.float32),
    )
    assert out["d_init"].shape == (1, 1, 32, 64)
    assert out["d_final"].shape == (1, 1, 32, 64)
    np.testing.assert_allclose(out["attention"].sum(axis=-1), 1.0, atol=1e-5)


def test_default_config_carries_parameter_table():
    text = iadc.default_config()
    for line in ("learning_rate = 0.0001", "batch_size = 4", "lambda_init = 0.5", "lambda_obj = 3", "keep_prob = 0.05"):
        assert line in text
    with pytest.raises(iadc.ConfigError):
        iadc.Model("no_such_key = 1")


def test_cli_round_trip(tmp_path):
    data, run = tmp_path / "data", tmp_path / "run"
    code, out, _ = iadc.run_cli(["gen-data", "--out", str(data), "--count", "3", "--size", "32x64", "--objects", "2"])
    assert code == 0 and "split.txt" in out
    (tmp_path / "tiny.cfg").write_text(TINY + "\nsteps = 2\n")
    code, out, err = iadc.run_cli(["train", "--config", str(tmp_path / "tiny.cfg"), "--data", str(data), "--out", str(run)])
    assert code == 0, err
    model = iadc.Model.load(str(run / "checkpoint.bin"))
    assert model.step == 2
    assert iadc.run_cli(["gen-data", "--out", str(data), "--objects", "0"])[0] == 2


def test_gradient_suites_pass():
    ops = iadc.check_op_gradients()
    assert len(ops) == 24
    assert max(ops.values()) < 1e-5
    err, coords = iadc.check_pipeline_gradient()
    assert err < 1e-3 and coords >= 100
