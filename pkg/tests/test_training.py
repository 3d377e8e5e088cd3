"""Training loop plumbing (short runs only; full runs live in acceptance)."""

import csv

import numpy as np
import pytest

from liveview import tensor as T
from liveview.geometry import equidisparity_planes
from liveview.network import LiveViewNet
from liveview.training import (HELD_OUT_SEED_OFFSET, TrainConfig, TrainingDiverged,
                               evaluate, image_loss, train)


def test_image_loss_values():
    a = T.Tensor(np.zeros((3, 4, 4)))
    b = T.Tensor(np.full((3, 4, 4), 0.5))
    assert image_loss(a, b, "l1").item() == pytest.approx(0.5)
    assert image_loss(a, b, "l2").item() == pytest.approx(0.25)
    with pytest.raises(ValueError):
        image_loss(a, T.Tensor(np.zeros((3, 5, 5))))
    with pytest.raises(ValueError):
        image_loss(a, b, "huber")


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        TrainConfig(num_views=1)


def short_config(**kw):
    base = dict(iterations=2, val_every=0, seed=11)
    base.update(kw)
    return TrainConfig(**base)


def test_train_deterministic_and_logs(tmp_path):
    cfg = short_config()
    net_a = train(cfg, checkpoint_path=tmp_path / "a.lvw", log_path=tmp_path / "log.csv")
    net_b = train(cfg)
    assert net_a.last_losses == net_b.last_losses
    for name, p in net_a.parameters().items():
        assert np.array_equal(p.data, net_b.parameters()[name].data)
    with open(tmp_path / "log.csv") as f:
        rows = list(csv.DictReader(f))
    assert [r["iteration"] for r in rows] == ["0", "1"]
    assert all(float(r["wall_ms"]) > 0 for r in rows)
    loaded = LiveViewNet.load(tmp_path / "a.lvw")
    assert loaded.meta.trained_planes == 16
    assert loaded.meta.z_near == pytest.approx(2.0)


def test_train_decreases_loss_over_repeated_scene():
    """Over-fitting a single scene: the loss on that scene must drop."""
    from liveview.optim import Adam
    from liveview.render import render_target_centered_t
    from liveview.scenes import RigConfig, SceneConfig, generate_scene, make_example
    from liveview.training import build_network

    cfg = short_config(planes=4)
    net = build_network(cfg)
    opt = Adam(net.parameters(), lr=1e-3)
    planes = equidisparity_planes(2.0, 10.0, 4)
    scene = generate_scene(5, SceneConfig())
    views, cams, gt, tgt = make_example(scene, RigConfig(), 6)
    losses = []
    for _ in range(8):
        net.train()
        pred, _ = render_target_centered_t(net, views, cams, tgt, planes)
        loss = image_loss(pred, T.Tensor(gt.transpose(2, 0, 1)))
        losses.append(loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert losses[-1] < losses[0]


def test_divergence_reports_scene_seed(monkeypatch):
    cfg = short_config()

    def bad_loss(pred, gt, kind="l1"):
        return T.Tensor(np.array(np.nan))

    import liveview.training as tr
    monkeypatch.setattr(tr, "image_loss", bad_loss)
    with pytest.raises(TrainingDiverged) as exc:
        tr.train(cfg)
    assert exc.value.iteration == 0
    assert exc.value.scene_seed == cfg.seed * 100_000_000


def test_input_centered_and_static_trainable():
    for kw in (dict(centering="input"), dict(arch="static")):
        net = train(short_config(iterations=1, planes=4, **kw))
        assert np.isfinite(net.last_losses[0])


def test_evaluate_deterministic_and_held_out(tmp_path):
    net = train(short_config(iterations=1, planes=4))
    planes = equidisparity_planes(2.0, 10.0, 4)
    a = evaluate(net, 2, seed=0, planes=planes)
    b = evaluate(net, 2, seed=0, planes=planes)
    np.testing.assert_array_equal(a.psnr_values, b.psnr_values)
    np.testing.assert_array_equal(a.ssim_values, b.ssim_values)
    assert len(a.psnr_values) == 2
    # held-out seeds never collide with training scene seeds
    train_seeds = {s * 100_000_000 + i for s in range(10) for i in range(10_000)}
    eval_seeds = {HELD_OUT_SEED_OFFSET + s * 100_000 + k for s in range(10) for k in range(64)}
    assert not train_seeds & eval_seeds
