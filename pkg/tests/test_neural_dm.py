import json

import numpy as np
import pytest

from dloplan import dlo_sim, neural_dm
from dloplan.autodiff import Tensor
from dloplan.neural_dm import (Dataset, ModelArch, NormStats, TrainConfig, broyden_jacobian, collect_dataset,
                               finetune_decoder, forward, init_params, load_checkpoint, loss, loss_and_grad,
                               predict, save_checkpoint, train)


def sample(data, k=0):
    return data.s[k], data.y[k], data.a[k]


def test_output_shape_default_arch():
    params = init_params(ModelArch(), seed=0)
    st = dlo_sim.init_sim(dlo_sim.CableParams(), [[0.2, 0.2, 0.4], [0.45, 0.2, -0.4]])
    out = predict(params, st.shape, st.robot, np.zeros((2, 3)))
    assert out.shape == (13, 2)
    with pytest.raises(ValueError):
        predict(params, st.shape[:12], st.robot, np.zeros((2, 3)))


def test_gripper_identity_breaks_symmetry(tiny_model, tiny_data):
    s, y, a = sample(tiny_data, 5)
    base = predict(tiny_model, s, y, a)
    swapped = predict(tiny_model, s, y[::-1], a[::-1])
    assert np.abs(base - swapped).max() > 1e-8


def test_loss_examples(tiny_model, tiny_data):
    batch = tiny_data.subset(slice(0, 1))
    pred = predict(tiny_model, batch.s, batch.y, batch.a)
    exact = Dataset(batch.s, batch.y, batch.a, pred, batch.episode)
    assert float(loss(tiny_model, exact).data) == pytest.approx(0.0, abs=1e-20)
    off = Dataset(batch.s, batch.y, batch.a, pred - 0.01, batch.episode)
    assert float(loss(tiny_model, off).data) == pytest.approx(2 * 5 * 1e-4, rel=1e-9)
    with pytest.raises(ValueError):
        loss(tiny_model, tiny_data.subset(slice(0, 0)))


def test_parameter_gradients_fd(tiny_arch, tiny_data, rng):
    params = init_params(tiny_arch, seed=4)
    params.stats = neural_dm.fit_stats(tiny_data)
    batch = tiny_data.subset(slice(0, 8))
    _, grads = loss_and_grad(params, batch)
    names = params.names()
    ana, num = [], []
    h = 1e-6
    for _ in range(100):
        k = names[rng.integers(len(names))]
        idx = tuple(rng.integers(d) for d in params.weights[k].shape)
        orig = params.weights[k][idx]
        params.weights[k][idx] = orig + h
        fp = float(loss(params, batch).data)
        params.weights[k][idx] = orig - h
        fm = float(loss(params, batch).data)
        params.weights[k][idx] = orig
        ana.append(grads[k][idx])
        num.append((fp - fm) / (2 * h))
    ana, num = np.array(ana), np.array(num)
    assert np.linalg.norm(ana - num) / np.linalg.norm(num) < 1e-4


def test_input_gradients_fd(tiny_model, tiny_data):
    s, y, a = sample(tiny_data, 3)
    At = Tensor(a, requires_grad=True)
    out = forward(tiny_model, s, y, At)
    weight = np.linspace(-1, 1, out.data.size).reshape(out.shape)
    (out * weight).sum().backward()
    h = 1e-7
    num = np.zeros_like(a)
    for idx in np.ndindex(*a.shape):
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        num[idx] = ((predict(tiny_model, s, y, ap) - predict(tiny_model, s, y, am)) * weight).sum() / (2 * h)
    assert np.linalg.norm(At.grad - num) / np.linalg.norm(num) < 1e-4


def test_attention_rows_sum_to_one(tiny_model, tiny_data):
    log = []
    forward(tiny_model, tiny_data.s[:4], tiny_data.y[:4], tiny_data.a[:4], attn_log=log)
    # encoder, robot encoder, decoder self and cross attention
    assert len(log) == 4
    for att in log:
        assert np.allclose(att.sum(axis=-1), 1.0, atol=1e-12)


def test_normalization_round_trip(rng):
    x = rng.normal(size=(10, 4))
    mean, scale = rng.normal(size=4), rng.uniform(0.1, 3, 4)
    assert np.abs(neural_dm.denormalize(neural_dm.normalize(x, mean, scale), mean, scale) - x).max() <= 1e-12


def test_determinism(tiny_arch, tiny_data):
    a, b = init_params(tiny_arch, seed=9), init_params(tiny_arch, seed=9)
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
    cfg = TrainConfig(epochs=1, batch_size=64, seed=2)
    _, h1 = train(a, tiny_data, cfg)
    _, h2 = train(b, tiny_data, cfg)
    assert json.dumps(h1) == json.dumps(h2)


def test_zero_epochs_is_identity(tiny_arch, tiny_data):
    p = init_params(tiny_arch, seed=1)
    q, hist = train(p, tiny_data, TrainConfig(epochs=0))
    assert all(np.array_equal(p.weights[k], q.weights[k]) for k in p.weights)


def test_training_reduces_validation_loss(tiny_arch, tiny_data):
    _, hist = train(init_params(tiny_arch, seed=0), tiny_data, TrainConfig(epochs=4, batch_size=64, lr=3e-3))
    assert min(h["val"] for h in hist[1:]) < hist[0]["val"]


def test_finetune_freezes_encoders(tiny_model, tiny_data):
    tuned = finetune_decoder(tiny_model, tiny_data.subset(slice(0, 200)),
                             TrainConfig(epochs=1, batch_size=64, lr=1e-3))
    for k in tiny_model.names():
        same = np.array_equal(tiny_model.weights[k], tuned.weights[k])
        if k.startswith(("encoder.", "robot_encoder.")):
            assert same, k
    assert any(not np.array_equal(tiny_model.weights[k], tuned.weights[k]) for k in tiny_model.names("decoder"))
    empty = finetune_decoder(tiny_model, Dataset.empty(5))
    assert all(np.array_equal(tiny_model.weights[k], empty.weights[k]) for k in tiny_model.names())


def test_finetune_adapts_to_a_different_cable(tiny_model):
    # uniform stiffness scaling leaves the quasi-static equilibrium unchanged, so the new cable is shorter
    other = collect_dataset(dlo_sim.CableParams(length=0.16, num_keypoints=5), 700, seed=11, episode_len=100)
    tune, held = other.subset(slice(0, 500)), other.subset(slice(500, None))
    before = neural_dm.eval_loss(tiny_model, held)
    tuned = finetune_decoder(tiny_model, tune, TrainConfig(epochs=8, batch_size=64, lr=3e-3, patience=8))
    assert neural_dm.eval_loss(tuned, held) < before


def test_collect_dataset_contract(tiny_cable, tiny_data):
    d = tiny_data
    assert len(d) == 800
    assert np.all(np.abs(d.a) <= neural_dm.DEFAULT_A_MAX + 1e-15)
    # ds is the simulator successor minus the current shape
    for k in (0, 17, 311):
        st = dlo_sim.init_sim(tiny_cable, d.y[k], guess=d.s[k])
        nxt = dlo_sim.step(st, d.a[k], tiny_cable)
        assert np.abs(nxt.shape - d.s[k] - d.ds[k]).max() < 1e-9
    again = collect_dataset(tiny_cable, 50, seed=3, episode_len=100)
    assert np.array_equal(again.s, d.s[:50]) and np.array_equal(again.ds, d.ds[:50])


def test_broyden_examples(rng):
    Jtrue = rng.normal(size=(10, 6))
    J = np.zeros((10, 6))
    a = rng.normal(size=6)
    J = broyden_jacobian(J, Jtrue @ a, a)
    assert np.allclose(J @ a, Jtrue @ a, atol=1e-14)
    assert np.array_equal(broyden_jacobian(J, rng.normal(size=10), np.zeros(6)), J)
    dirs = rng.normal(size=(3, 6))
    for _ in range(200):
        for d in dirs:
            J = broyden_jacobian(J, Jtrue @ d, d)
    assert max(np.linalg.norm(J @ d - Jtrue @ d) for d in dirs) < 1e-8


def test_checkpoint_round_trip(tiny_model, tmp_path):
    path = tmp_path / "m.npz"
    save_checkpoint(tiny_model, path)
    back = load_checkpoint(path)
    assert back.arch == tiny_model.arch
    assert all(np.array_equal(back.weights[k], tiny_model.weights[k]) for k in tiny_model.weights)
    assert back.stats.to_dict() == tiny_model.stats.to_dict()


def test_dataset_save_load(tiny_data, tmp_path):
    tiny_data.save(tmp_path / "d.npz")
    back = Dataset.load(tmp_path / "d.npz")
    assert np.array_equal(back.s, tiny_data.s) and np.array_equal(back.episode, tiny_data.episode)
