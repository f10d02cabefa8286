import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srx.data_io import SynthDims, load_dataset, synth_dataset
from srx.errors import ConfigError, ValidationError
from srx.model import ModelConfig, RetrievalModel, SimilarityMatrix
from srx.tensor import Tensor
from srx.train import (
    SGD,
    Adam,
    RunConfig,
    epoch_batches,
    load_model,
    read_loss_history,
    retrieve,
    train,
    write_loss_history,
)


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    return load_dataset(synth_dataset(root, 11, 5, SynthDims(feature_dim=10, word_dim=6)))


def test_defaults_follow_the_training_recipe():
    cfg = RunConfig()
    assert (cfg.margin, cfg.epochs, cfg.batch_size) == (0.2, 100, 32)
    assert cfg.mining == "hardest" and cfg.features_mode == "2d-3d-roi"


@pytest.mark.parametrize("bad", [{"batch_size": 1}, {"epochs": -1}, {"lr": -1.0}, {"optimizer": "rmsprop"},
                                 {"mining": "x"}, {"margin": -0.2}])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        RunConfig(**bad)


def test_config_round_trip_and_unknown_keys(tmp_path):
    cfg = RunConfig(seed=4, lr=0.1)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig.from_dict({"bogus": 1})
    path = tmp_path / "c.json"
    path.write_text('{"seed": 2, "epochs": 5}')
    assert RunConfig.load(path, epochs=None, margin=0.3) == RunConfig(seed=2, epochs=5, margin=0.3)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 70), st.integers(2, 40), st.integers(0, 100), st.integers(0, 50))
def test_batches_partition_the_pairs(n, size, seed, epoch):
    batches = epoch_batches(n, size, seed, epoch)
    flat = np.concatenate(batches)
    assert sorted(flat.tolist()) == list(range(n))
    assert all(len(b) >= 2 for b in batches)
    assert [b.tolist() for b in batches] == [b.tolist() for b in epoch_batches(n, size, seed, epoch)]


def test_sgd_and_adam_steps():
    p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    p.grad[:] = [0.5, -2.0]
    SGD({"p": p}, 0.1).step()
    np.testing.assert_allclose(p.data, [0.95, -0.8])
    q = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    q.grad[:] = [0.5, -2.0]
    opt = Adam({"q": q}, 0.1)
    opt.step()
    # the first bias-corrected Adam step moves each coordinate by lr against its sign
    np.testing.assert_allclose(q.data, [0.9, -0.9], atol=1e-7)
    assert set(opt.state()) == {"adam.m.q", "adam.v.q"}


def test_training_reduces_loss(tiny):
    result = train(RunConfig(epochs=15, d_model=8, heads=2, batch_size=5, optimizer="adam", lr=0.01), tiny)
    assert result.history[-1] < result.history[0]
    assert result.epoch == 15


def test_training_requires_two_pairs(tmp_path, tiny):
    ds = load_dataset(synth_dataset(tmp_path, 1, 2, SynthDims(feature_dim=10, word_dim=6)))
    ds.graphs.pop(next(iter(ds.graphs)))
    with pytest.raises(ConfigError):
        train(RunConfig(epochs=1, d_model=8), ds)


def test_checkpoint_restores_model(tiny, tmp_path):
    result = train(RunConfig(epochs=2, d_model=8, heads=2, batch_size=5), tiny, out_dir=tmp_path)
    model, tensors, meta = load_model(result.checkpoint)
    assert meta["epoch"] == 2 and len(meta["history"]) == 2
    for name, t in result.model.named_parameters():
        np.testing.assert_array_equal(dict(model.named_parameters())[name].data, t.data)


def test_loss_history_file(tmp_path):
    path = write_loss_history(tmp_path / "h.tsv", [0.5, 1 / 3])
    assert path.read_text().splitlines()[0] == "epoch\tloss"
    assert read_loss_history(path) == [0.5, 1 / 3]


def test_model_state_round_trip():
    a = RetrievalModel(ModelConfig(feature_dim=6, word_dim=5, d_model=8, heads=2, seed=1))
    b = RetrievalModel(ModelConfig(feature_dim=6, word_dim=5, d_model=8, heads=2, seed=2))
    b.load_state_dict(a.state_dict())
    assert all(np.array_equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
    bad = a.state_dict()
    bad.pop(next(iter(bad)))
    with pytest.raises(ConfigError):
        b.load_state_dict(bad)


def test_model_config_checks():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=10, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(feature_mode="nope")
    full = ModelConfig.full()
    assert (full.feature_dim, full.word_dim, full.d_model) == (2048, 300, 1024)


def test_retrieve_orders_ties_by_clip_id():
    sim = SimilarityMatrix(np.array([[0.5, 0.9, 0.5, 0.1]]), ["c"], ["d", "b", "a", "e"])
    assert retrieve(sim, "c", 3) == [("b", 0.9), ("a", 0.5), ("d", 0.5)]
    assert len(retrieve(sim, "c", 10)) == 4
    with pytest.raises(ValidationError):
        retrieve(sim, "missing", 1)
