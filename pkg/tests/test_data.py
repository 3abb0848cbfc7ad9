import numpy as np
import pytest

from vocbf import data, dubins
from vocbf.data import DatasetFormatError, TransitionSet

# chi2.ppf(0.99, df=99); frozen so tests need no scipy
CHI2_99_DF99 = 134.6416168558


@pytest.fixture(scope="module")
def agv_set():
    return dubins.generate_dataset(3000, dubins.AgvConfig(), seed=9)


def toy_set(n=20, n_episodes=4, state_dim=2, seed=0):
    rng = np.random.default_rng(seed)
    return TransitionSet(
        episode_ids=np.repeat(np.arange(n_episodes), n // n_episodes),
        step_ids=np.tile(np.arange(n // n_episodes), n_episodes),
        X=rng.normal(0, 1, (n, state_dim)),
        U=rng.uniform(-1, 1, (n, 1)),
        X_next=rng.normal(0, 1, (n, state_dim)),
        ell_x=rng.normal(0, 1, n),
        ell_x_next=rng.normal(0, 1, n),
        metadata={"env": "toy", "dt": 0.1, "seed": seed},
    )


def test_roundtrip_exact(tmp_path, agv_set):
    path = tmp_path / "ds.csv"
    data.save(agv_set, path)
    loaded = data.load(path)
    for field in ("episode_ids", "step_ids", "X", "U", "X_next", "ell_x", "ell_x_next"):
        assert np.array_equal(getattr(agv_set, field), getattr(loaded, field)), field


def test_header_declares_dims(tmp_path, agv_set):
    path = tmp_path / "ds.csv"
    data.save(agv_set, path)
    first = path.read_text().splitlines()[0]
    assert first.startswith("# VOCBF-DATASET v1")
    assert "state_dim=3" in first and "control_dim=1" in first
    assert "dt=0.01" in first and "seed=9" in first


def test_load_truncated_record_reports_line(tmp_path, agv_set):
    path = tmp_path / "ds.csv"
    data.save(agv_set, path)
    lines = path.read_text().splitlines()
    lines[5] = lines[5].rsplit(",", 2)[0]  # drop two fields from row on line 6
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="line 6"):
        data.load(bad)


def test_load_bad_magic(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("episode,step\n0,0\n")
    with pytest.raises(DatasetFormatError, match="magic"):
        data.load(path)


def test_split_counts():
    tset = toy_set(n=100, n_episodes=10)
    train, test = data.split(tset, 0.2, seed=1)
    assert len(np.unique(train.episode_ids)) == 8
    assert len(np.unique(test.episode_ids)) == 2


def test_split_deterministic_and_partitions():
    tset = toy_set(n=100, n_episodes=10)
    a_train, a_test = data.split(tset, 0.3, seed=5)
    b_train, b_test = data.split(tset, 0.3, seed=5)
    assert np.array_equal(a_train.episode_ids, b_train.episode_ids)
    train_eps = set(a_train.episode_ids.tolist())
    test_eps = set(a_test.episode_ids.tolist())
    assert train_eps.isdisjoint(test_eps)
    assert train_eps | test_eps == set(range(10))
    assert len(a_train) + len(a_test) == len(tset)


def test_split_never_splits_an_episode():
    tset = toy_set(n=100, n_episodes=10)
    train, test = data.split(tset, 0.2, seed=2)
    for ep in np.unique(tset.episode_ids):
        in_train = np.any(train.episode_ids == ep)
        in_test = np.any(test.episode_ids == ep)
        assert in_train != in_test


def test_split_needs_two_episodes():
    tset = toy_set(n=10, n_episodes=1)
    with pytest.raises(ValueError):
        data.split(tset, 0.5, seed=0)


def test_sample_minibatch_size_and_determinism():
    tset = toy_set(n=100, n_episodes=10)
    a = data.sample_minibatch(tset, 256, np.random.Generator(np.random.PCG64(3)))
    b = data.sample_minibatch(tset, 256, np.random.Generator(np.random.PCG64(3)))
    assert len(a) == 256
    assert np.array_equal(a.indices, b.indices)


def test_sample_minibatch_singleton_repeats():
    tset = toy_set(n=4, n_episodes=2).subset(np.array([True, False, False, False]))
    mb = data.sample_minibatch(tset, 8, np.random.default_rng(0))
    assert np.all(mb.indices == 0)


def test_sample_minibatch_uniformity_chi_square():
    tset = toy_set(n=100, n_episodes=10)
    rng = np.random.Generator(np.random.PCG64(7))
    draws = 1_000_000
    counts = np.zeros(100)
    for _ in range(draws // 10_000):
        mb = data.sample_minibatch(tset, 10_000, rng)
        counts += np.bincount(mb.indices, minlength=100)
    expected = draws / 100
    stat = float(np.sum((counts - expected) ** 2 / expected))
    assert stat < CHI2_99_DF99


def test_empty_set_rejected():
    with pytest.raises(ValueError):
        TransitionSet(np.array([], dtype=np.int64), np.array([], dtype=np.int64),
                      np.zeros((0, 2)), np.zeros((0, 1)), np.zeros((0, 2)),
                      np.zeros(0), np.zeros(0), {})


def test_content_hash_stable(tmp_path, agv_set):
    path = tmp_path / "ds.csv"
    data.save(agv_set, path)
    assert data.content_hash(path) == data.content_hash(path)
