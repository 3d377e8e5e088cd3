"""Render-service contract: HTTP endpoints, streaming, latest-wins queueing."""

import json
import struct

import numpy as np
import pytest
from starlette.testclient import TestClient

from liveview.server import FRAME_HEADER, FLAG_CLAMPED, FLAG_PNG, build_app

PLANES = 8


@pytest.fixture(scope="module")
def ckpt_path(tmp_path_factory, tiny_net):
    path = tmp_path_factory.mktemp("srv") / "net.lvw"
    tiny_net.save(path)
    return str(path)


@pytest.fixture(scope="module")
def client(ckpt_path):
    app = build_app(ckpt_path, scene_seed=42, planes=PLANES, max_sessions=2)
    with TestClient(app) as c:
        yield c


def pose(seq, c=(0.0, 0.0, 0.0), **kw):
    msg = {"seq": seq, "c": list(c)}
    msg.update(kw)
    return json.dumps(msg)


def read_frame(ws):
    raw = ws.receive_bytes()
    header = FRAME_HEADER.unpack(raw[:FRAME_HEADER.size])
    return header, raw[FRAME_HEADER.size:]


def test_health_and_info(client):
    assert client.get("/health").json()["status"] == "ok"
    info = client.get("/info").json()
    assert info["V"] == 5
    assert info["D"] == PLANES
    assert info["width"] == 96 and info["height"] == 96
    assert abs(info["param_count"] - 391_000) / 391_000 < 0.02
    lo, hi = info["hull"]["lo"], info["hull"]["hi"]
    assert len(lo) == 3 and all(a <= b for a, b in zip(lo, hi))
    assert info["opx"] > 0
    # idempotent
    assert client.get("/info").json() == info


def test_info_before_init_returns_503(ckpt_path):
    app = build_app(ckpt_path, scene_seed=1, planes=4)
    # requests issued without the lifespan context: startup has not run yet
    c = TestClient(app)
    assert c.get("/info").status_code == 503
    assert c.get("/health").json()["ready"] is False


def test_select_planes_validation(client):
    assert client.post("/select_planes", json={"k": 0}).status_code == 400
    assert client.post("/select_planes", json={"k": PLANES + 1}).status_code == 400
    assert client.post("/select_planes", json={"k": "x"}).status_code == 400


def test_select_planes_k_equals_d_returns_all(client):
    r = client.post("/select_planes", json={"k": PLANES})
    assert r.status_code == 200
    assert len(r.json()["depths"]) == PLANES


def test_select_planes_subset_sorted(client):
    r = client.post("/select_planes", json={"k": 3})
    depths = r.json()["depths"]
    assert len(depths) == 3
    assert depths == sorted(depths)
    # restore full rendering for other tests
    client.post("/select_planes", json={"k": PLANES})


def test_stream_frame_layout(client):
    with client.websocket_connect("/stream") as ws:
        ws.send_text(pose(7))
        (seq, w, h, ms, used, flags), payload = read_frame(ws)
        assert (seq, w, h) == (7, 96, 96)
        assert used == PLANES
        assert flags & FLAG_CLAMPED == 0
        assert len(payload) == 96 * 96 * 3


def test_stream_render_purity(client):
    """Same pose, same plane set -> bit-identical frames."""
    with client.websocket_connect("/stream") as ws:
        frames = []
        for seq in (1, 2):
            ws.send_text(pose(seq, (0.01, 0.0, 0.0)))
            _, payload = read_frame(ws)
            frames.append(payload)
    assert frames[0] == frames[1]


def test_stream_counter_integrity(client):
    with client.websocket_connect("/stream") as ws:
        ws.send_text(pose(1))
        (seq, _, _, ms, _, _), _ = read_frame(ws)
        assert 0 < ms < 60_000


def test_stream_clamped_pose_flag(client):
    with client.websocket_connect("/stream") as ws:
        ws.send_text(pose(3, (9.0, 9.0, 9.0)))
        (seq, _, _, _, _, flags), _ = read_frame(ws)
        assert seq == 3
        assert flags & FLAG_CLAMPED


def test_stream_k_planes_followed(client):
    with client.websocket_connect("/stream") as ws:
        ws.send_text(pose(1, k_planes=4))
        (seq, _, _, _, used, _), _ = read_frame(ws)
        assert used == 4
        ws.send_text(pose(2))
        (_, _, _, _, used2, _), _ = read_frame(ws)
        assert used2 == PLANES


def test_stream_malformed_pose_keeps_session(client):
    with client.websocket_connect("/stream") as ws:
        ws.send_text("{bad json")
        err = ws.receive_json()
        assert "error" in err
        ws.send_text(json.dumps({"seq": 5, "c": [0.0, 0.0]}))  # wrong arity
        err2 = ws.receive_json()
        assert err2["seq"] == 5
        ws.send_text(pose(6))
        (seq, *_), _ = read_frame(ws)
        assert seq == 6


def test_stream_latest_wins_nondecreasing_seq(client):
    """Flooding poses: responses form a nondecreasing-seq subsequence and
    stale poses may be dropped."""
    n = 40
    with client.websocket_connect("/stream") as ws:
        for i in range(n):
            ws.send_text(pose(i, (0.001 * i, 0.0, 0.0)))
        seqs = []
        while True:
            (seq, *_), _ = read_frame(ws)
            seqs.append(seq)
            if seq == n - 1:
                break
        assert seqs == sorted(seqs)
        assert len(set(seqs)) == len(seqs)
        assert len(seqs) <= n


def test_png_debug_mode(client):
    from io import BytesIO

    from PIL import Image

    with client.websocket_connect("/stream?format=png") as ws:
        ws.send_text(pose(1))
        (seq, w, h, _, _, flags), payload = read_frame(ws)
        assert flags & FLAG_PNG
        img = Image.open(BytesIO(payload))
        assert img.size == (96, 96)


def test_max_sessions_enforced(client):
    with client.websocket_connect("/stream") as ws1:
        with client.websocket_connect("/stream") as ws2:
            with pytest.raises(Exception):
                with client.websocket_connect("/stream") as ws3:
                    ws3.send_text(pose(1))
                    ws3.receive_bytes()


def test_identity_view_psnr(client, trained_net, tmp_path_factory):
    """Pose at an input camera reproduces that input image (> 40 dB) with a
    trained checkpoint."""
    from liveview.metrics import psnr
    from liveview.scenes import RigConfig, SceneConfig, generate_scene, \
        render_ground_truth, rig_cameras

    path = tmp_path_factory.mktemp("idsrv") / "trained.lvw"
    trained_net.save(path)
    app = build_app(str(path), scene_seed=42, planes=16)
    cams = rig_cameras(RigConfig())
    scene = generate_scene(42, SceneConfig())
    ref = render_ground_truth(scene, cams[0])
    with TestClient(app) as c:
        with c.websocket_connect("/stream") as ws:
            ws.send_text(pose(1, tuple(cams[0].c)))
            (seq, w, h, _, _, flags), payload = read_frame(ws)
            img = np.frombuffer(payload, np.uint8).reshape(h, w, 3) / 255.0
    assert flags & FLAG_CLAMPED == 0
    assert psnr(img, ref) > 40.0
