import json
import math

import numpy as np
import pytest

import memdpc


def brute_force_loss(pred, target):
    b, s, c, h, w = pred.shape
    p = pred.transpose(0, 1, 3, 4, 2).reshape(-1, c)
    t = target.transpose(0, 1, 3, 4, 2).reshape(-1, c)
    total = 0.0
    for i in range(p.shape[0]):
        scores = [float(np.dot(p[i], t[j])) for j in range(t.shape[0])]
        m = max(scores)
        total += -(scores[i] - m - math.log(sum(math.exp(x - m) for x in scores)))
    return total / p.shape[0]


def test_dense_loss_matches_python_loop():
    rng = np.random.default_rng(0)
    pred = rng.normal(size=(2, 2, 3, 2, 2))
    target = rng.normal(size=(2, 2, 3, 2, 2))
    r = memdpc.dense_contrastive_loss(pred, target)
    assert r["num_candidates"] == 16
    assert r["loss"] == pytest.approx(brute_force_loss(pred, target), abs=1e-10)
    assert r["loss"] == pytest.approx(memdpc.contrastive_loss_oracle(pred, target), abs=1e-10)


def test_equal_scores_give_log_n():
    pred = np.zeros((2, 1, 4, 2, 2))
    r = memdpc.dense_contrastive_loss(pred, np.ones_like(pred))
    assert r["loss"] == pytest.approx(math.log(8), abs=1e-12)


def test_expect_future_and_critic_identity():
    rng = np.random.default_rng(1)
    k, c = 6, 4
    p = rng.random((k, 1, 1))
    p /= p.sum()
    bank = rng.normal(size=(k, c))
    z = rng.normal(size=c)
    zhat = memdpc.expect_future(p, bank)[:, 0, 0]
    expected = sum(p[i, 0, 0] * float(bank[i] @ z) for i in range(k))
    assert memdpc.critic(zhat.tolist(), z.tolist()) == pytest.approx(expected, abs=1e-10)


def test_flow_endpoints():
    assert memdpc.encode_displacement(-20.0) == 0
    assert memdpc.encode_displacement(20.0) == 255
    flow = np.zeros((2, 2, 2))
    flow[0, 0] = [-20.0, 20.0]
    out = memdpc.preprocess_flow(flow)
    assert out.dtype == np.uint8 and out.shape == (2, 2, 3)
    assert list(out[0, 0]) == [0, 255, 0]


def test_errors_carry_their_kind():
    with pytest.raises(memdpc.MemdpcError) as info:
        memdpc.preprocess_flow(np.full((1, 1, 2), np.nan))
    assert info.value.kind == "NonFiniteInput"


def test_retrieval_self_recall_and_monotone():
    rng = np.random.default_rng(2)
    q = rng.normal(size=(10, 5))
    labels = list(rng.integers(0, 3, size=10))
    assert memdpc.retrieve(q, labels, q, labels, [1])[1] == 1.0
    g = rng.normal(size=(30, 5))
    gl = list(rng.integers(0, 3, size=30))
    r = memdpc.retrieve(q, labels, g, gl, [1, 5, 10, 20])
    assert r[1] <= r[5] <= r[10] <= r[20]


def test_cli_round_trip(tmp_path):
    data = str(tmp_path / "data")
    assert memdpc.gen_synthetic(data, clips_per_class=4, clip_len=40, write_png=False) == 16
    code, out, err = memdpc.run_cli(
        ["retrieve", "--profile", "desk_tiny", "--data.root", data, "--run.root", str(tmp_path / "runs")]
    )
    assert code == 0, err
    report = json.loads(out.strip().splitlines()[-1])
    assert report["queries"] == 4 and report["gallery"] == 12
    ids, labels, vectors = memdpc.read_embeddings(tmp_path / "runs" / "retrieve" / "embeddings_test.csv")
    assert vectors.shape == (4, 16) and len(ids) == 4 and sorted(set(labels)) == [0, 1, 2, 3]

    code, _, err = memdpc.run_cli(["pretrain", "--memroy_k", "5"])
    assert code == 2
    assert "memroy_k" in json.loads(err)["message"]
