import json
import math

import numpy as np
import pytest

import segxal


def test_entropy_bounds_and_extremes():
    rng = np.random.default_rng(0)
    p = rng.random((4, 6, 7)) + 1e-3
    p /= p.sum(axis=0, keepdims=True)
    p[:, 0, 0] = 0.25
    p[:, 0, 1] = [0, 1, 0, 0]
    bits, norm = segxal.entropy_map(p)
    assert bits.shape == (6, 7)
    assert bits.min() >= 0 and bits.max() <= 2 + 1e-12
    assert abs(bits[0, 0] - 2.0) < 1e-9
    assert bits[0, 1] == 0.0
    ref = -(p * np.log2(np.where(p > 0, p, 1))).sum(axis=0)
    assert np.allclose(bits, ref, atol=1e-12)
    assert np.allclose(norm, bits / 2.0)


def test_fuse_identities():
    rng = np.random.default_rng(1)
    a, b = rng.random((5, 5)), rng.random((5, 5))
    assert np.array_equal(segxal.fuse(a, b, 1.0, 0.0), a)
    assert np.array_equal(segxal.fuse(a, b, 0.0, 1.0), b)
    assert segxal.fuse(np.full((1, 1), 0.8), np.full((1, 1), 0.4))[0, 0] == pytest.approx(0.6, abs=1e-15)
    with pytest.raises(segxal.SegxalError):
        segxal.fuse(a, b, 0.0, 0.0)


def test_candidates_and_dice():
    eem = np.zeros((16, 16))
    eem[2:6, 2:6] = 0.9
    eem[10:14, 9:15] = 0.7
    prompts = segxal.extract_candidates(eem, "s", percentile=50, min_region_px=4)
    assert [p["rank"] for p in prompts] == [1, 2]
    assert prompts[0]["score"] == pytest.approx(0.9)
    a = np.array([[1, 1, 2, 2]], dtype=np.uint8)
    b = np.array([[1, 2, 2, 1]], dtype=np.uint8)
    assert segxal.dice(a, b) == 0.5
    assert segxal.dice(a, a) == 1.0


def test_rasterize_rectangle():
    m = segxal.rasterize_polygon([(2, 3), (2, 9), (6, 9), (6, 3)], 10, 12)
    assert m.dtype == bool and m.sum() == 24 and m[2:6, 3:9].all()
    with pytest.raises(segxal.SegxalError, match="invalid-geometry"):
        segxal.rasterize_polygon([(1, 1), (5, 5), (1, 5), (5, 1)], 8, 8)


def test_model_trains_and_explains():
    sc = segxal.generate_scene(3, height=32, width=64, num_objects=2)
    assert sc["image"].shape == (32, 64, 3) and sc["gt"].shape == (32, 64)
    model = segxal.SegModel({"height": 32, "width": 64, "levels": 2, "base_channels": 4, "batch_size": 1,
                             "learning_rate": 0.05})
    losses = model.train([sc["image"]], [sc["gt"]], epochs=20)
    assert len(losses) == 20 and losses[-1] < losses[0]
    probs = model.predict_probs(sc["image"])
    assert probs.shape == (5, 32, 64) and np.allclose(probs.sum(axis=0), 1.0)
    cam = model.gradcam(sc["image"], 2)
    assert cam.shape == (32, 64) and cam.min() >= 0 and cam.max() <= 1
    prox = model.prox_gradcam(sc["image"], sc["nearness"], 0.5)
    assert prox.shape == (32, 64)
    mask = segxal.proximity_mask(sc["nearness"], 0.5)
    assert np.all(prox[mask == 0] >= 0)


def test_run_small_experiment(tmp_path):
    cfg = {
        "model": {"height": 32, "width": 64, "levels": 2, "base_channels": 4, "batch_size": 1,
                  "learning_rate": 0.05, "epochs_per_cycle": 1},
        "al": {"num_cycles": 2, "initial_label_fraction": 0.25, "query_fraction_per_cycle": 0.125, "seed": 2},
        "strategy": "random",
        "data": {"train_count": 16, "val_count": 3},
    }
    a = segxal.run(cfg)
    b = segxal.run(cfg, str(tmp_path / "run"))
    assert len(a["per_cycle_metrics"]) == 2
    assert len(a["pool"]["labeled"]) == 8
    strip = lambda ms: [{k: v for k, v in m.items() if k != "wall_time"} for m in ms]
    assert strip(a["per_cycle_metrics"]) == strip(b["per_cycle_metrics"])
    assert json.loads((tmp_path / "run" / "state.json").read_text())["cycle"] == 2
    for m in a["per_cycle_metrics"]:
        assert 0.0 <= m["miou"] <= 1.0 and not math.isnan(m["miou"])
