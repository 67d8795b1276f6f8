import numpy as np
import pytest

from dloplan.geom2d import ConvexObstacle, Workspace


@pytest.fixture
def unit_square():
    return ConvexObstacle.rectangle(0.0, 0.0, 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_scene(rng, n_obs=4, size=1.0, tries=200):
    """Non-overlapping random convex obstacles inside a size x size workspace."""
    obs = []
    for _ in range(tries):
        if len(obs) == n_obs:
            break
        c = rng.uniform(0.12, size - 0.12, 2)
        r = rng.uniform(0.03, 0.09)
        k = rng.integers(3, 7)
        ang = np.sort(rng.uniform(0, 2 * np.pi, k))
        pts = c + r * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        try:
            cand = ConvexObstacle.from_points(pts)
        except ValueError:
            continue
        if any(_overlap(cand, o, 0.01) for o in obs):
            continue
        obs.append(cand)
    return Workspace(size, size, tuple(obs))


def _overlap(a, b, pad):
    ca, cb = a.vertices.mean(0), b.vertices.mean(0)
    ra = np.linalg.norm(a.vertices - ca, axis=1).max()
    rb = np.linalg.norm(b.vertices - cb, axis=1).max()
    return np.linalg.norm(ca - cb) < ra + rb + pad


@pytest.fixture(scope="session")
def tiny_cable():
    from dloplan.dlo_sim import CableParams
    return CableParams(length=0.2, num_keypoints=5)


@pytest.fixture(scope="session")
def tiny_data(tiny_cable):
    from dloplan.neural_dm import collect_dataset
    return collect_dataset(tiny_cable, 800, seed=3, episode_len=100)


@pytest.fixture(scope="session")
def tiny_arch():
    from dloplan.neural_dm import ModelArch
    return ModelArch(embed_dim=8, num_heads=2, num_encoder_layers=1, num_decoder_layers=1, feedforward_dim=16,
                     num_keypoints=5)


@pytest.fixture(scope="session")
def tiny_model(tiny_arch, tiny_data):
    from dloplan.neural_dm import TrainConfig, init_params, train
    params, _ = train(init_params(tiny_arch, seed=0), tiny_data, TrainConfig(epochs=3, batch_size=64, lr=3e-3))
    return params


_CRITERIA = {}


@pytest.fixture(scope="session")
def criteria():
    """Acceptance results keyed by criterion number, printed at the end of the run."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, msg = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {msg}")
