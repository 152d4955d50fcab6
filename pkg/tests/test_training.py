"""Tests for the training schedule, cycle and checkpointed loop."""

import hashlib
from dataclasses import replace

import pydantic
import pytest
import torch

from a3gn.config import TrainConfig
from a3gn.data import make_eval_pairs
from a3gn.errors import ConfigurationError, NumericalError, RejectedInputError
from a3gn.records import TRACE_COLUMNS
from a3gn.store import load_checkpoint
from a3gn.training import CycleSampler, init_state, lr_schedule, train, train_cycle


def _full_schedule() -> TrainConfig:
    return TrainConfig(total_iters=200000, lr0=1e-4)


@pytest.mark.parametrize(
    "iteration,expected", [(0, 1e-4), (100000, 1e-4), (150000, 5e-5), (200000, 0.0)]
)
def test_lr_schedule_endpoints(iteration, expected):
    """Test constant first half, linear decay to zero in the second."""
    assert lr_schedule(iteration, _full_schedule()) == expected


def test_lr_schedule_is_non_increasing():
    """Test monotonicity over the whole run."""
    cfg = TrainConfig(total_iters=100, lr0=1e-3)
    rates = [lr_schedule(i, cfg) for i in range(101)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


@pytest.mark.parametrize("iteration", [-1, 200001])
def test_lr_schedule_rejects_out_of_range(iteration):
    """Test iterations outside [0, T]."""
    with pytest.raises(RejectedInputError):
        lr_schedule(iteration, _full_schedule())


def test_total_iters_must_be_even():
    """Test the two-phase schedule needs an even cycle count."""
    with pytest.raises(pydantic.ValidationError):
        TrainConfig(total_iters=5)


def _state(train_config, model_config, d2, split, target):
    train_set, _ = split
    state = init_state(train_config, model_config, d2, torch.float64)
    sampler = CycleSampler(
        train_set.images, target, train_config.batch_size, train_config.n_critic
    )
    return state, sampler


def test_one_cycle_update_counts(train_config, model_config, d2, split, target):
    """Test five critic updates, one full and one cosine-only update per cycle."""
    state, sampler = _state(train_config, model_config, d2, split, target)
    train_cycle(state, sampler.sample(state.rng))

    assert (state.counters.critic, state.counters.generator, state.counters.cosine) == (5, 1, 1)
    assert state.iteration == 1
    assert len(state.trace) == 1


def test_update_ratio_over_many_cycles(model_config, d2, split, target):
    """Test 5N critic and 2N generator-side updates over N cycles."""
    cfg = TrainConfig(total_iters=20, batch_size=2, image_size=32, seed=1)
    state, sampler = _state(cfg, model_config, d2, split, target)
    digest = d2.digest()
    for _ in range(20):
        train_cycle(state, sampler.sample(state.rng))

    assert (state.counters.critic, state.counters.generator, state.counters.cosine) == (100, 20, 20)
    assert d2.digest() == digest


def test_cycle_updates_attack_networks(train_config, model_config, d2, split, target):
    """Test every attack network moves while the embedder stays fixed."""
    state, sampler = _state(train_config, model_config, d2, split, target)
    before = {
        name: [p.detach().clone() for p in net.parameters()]
        for name, net in state.model.networks().items()
    }
    digest = d2.digest()

    train_cycle(state, sampler.sample(state.rng))

    for name, net in state.model.networks().items():
        changed = any(not torch.equal(a, p) for a, p in zip(before[name], net.parameters()))
        assert changed, name
    assert d2.digest() == digest


def test_equal_seeds_give_identical_traces(train_config, model_config, d2, split, target):
    """Test bit-identical loss traces for two runs with the same seed."""
    traces = []
    for _ in range(2):
        state, sampler = _state(train_config, model_config, d2, split, target)
        for _ in range(3):
            train_cycle(state, sampler.sample(state.rng))
        traces.append([p.row() for p in state.trace])

    assert traces[0] == traces[1]


def test_train_writes_checkpoints_with_summary(
    train_config, model_config, eval_config, d2, split, target, store
):
    """Test interval and final checkpoints, config hash and probe summary."""
    train_set, probe_set = split
    pairs = make_eval_pairs(probe_set, target, limit=4)

    paths = train(
        train_config, train_set, target, d2, store, model_config,
        dtype=torch.float64, probes=pairs, eval_cfg=eval_config,
    )

    assert [p.name for p in paths] == ["ckpt_000002", "ckpt_000004"]
    assert store.list() == [2, 4]
    final = load_checkpoint(paths[-1])
    assert final.meta.iteration == 4
    assert len(final.meta.config_hash) == 64
    assert final.meta.summary["n_probes"] == 4
    assert final.meta.counters == {"critic": 20, "generator": 4, "cosine": 4}
    assert [p.iter for p in final.trace] == [1, 2, 3, 4]
    header = (paths[-1] / "trace.csv").read_text().splitlines()[0]
    assert header == ",".join(TRACE_COLUMNS)


def test_resume_matches_uninterrupted_run(
    tmp_path, train_config, model_config, d2, split, target
):
    """Test stopping at a checkpoint and resuming reproduces the final weights."""
    from a3gn.store import CheckpointStore

    train_set, _ = split
    full = train(
        train_config, train_set, target, d2, CheckpointStore(tmp_path / "full"), model_config,
        dtype=torch.float64,
    )
    first = train(
        train_config, train_set, target, d2, CheckpointStore(tmp_path / "part"), model_config,
        dtype=torch.float64, stop_at=2,
    )
    resumed = train(
        train_config, train_set, target, d2, CheckpointStore(tmp_path / "resumed"), model_config,
        resume_from=first[-1],
    )

    expected = load_checkpoint(full[-1])
    actual = load_checkpoint(resumed[-1])
    assert actual.meta.iteration == 4
    assert actual.meta.digest == expected.meta.digest
    assert [p.row() for p in actual.trace] == [p.row() for p in expected.trace]


def test_equal_seeds_give_bit_identical_checkpoints(
    tmp_path, train_config, model_config, d2, split, target
):
    """Test two seeded runs write byte-identical checkpoint files."""
    from a3gn.store import CheckpointStore

    train_set, _ = split
    paths = [
        train(
            train_config, train_set, target, d2, CheckpointStore(tmp_path / name),
            model_config, dtype=torch.float64,
        )[-1]
        for name in ("a", "b")
    ]

    files = sorted(p.name for p in paths[0].iterdir())
    assert files == sorted(p.name for p in paths[1].iterdir())
    assert "meta.json" in files and "params.pt" in files
    for name in files:
        digests = [hashlib.sha256((p / name).read_bytes()).hexdigest() for p in paths]
        assert digests[0] == digests[1], name

    runs = [load_checkpoint(p) for p in paths]

    assert runs[0].meta.digest == runs[1].meta.digest
    for name, params in runs[0].payload["networks"].items():
        other = runs[1].payload["networks"][name]
        assert all(torch.equal(params[k], other[k]) for k in params)


def test_non_finite_loss_writes_diagnostic(
    monkeypatch, train_config, model_config, d2, split, target, store
):
    """Test a NaN loss aborts training after writing a diagnostic snapshot."""
    train_set, _ = split

    def broken(x, x_rec):
        return torch.tensor(float("nan"), dtype=x.dtype)

    monkeypatch.setattr("a3gn.training.reconstruction_loss", broken)
    with pytest.raises(NumericalError) as info:
        train(train_config, train_set, target, d2, store, model_config, dtype=torch.float64)

    assert info.value.iteration == 0
    diagnostics = list(store.root.glob("diagnostic_*"))
    assert len(diagnostics) == 1
    meta = load_checkpoint(diagnostics[0]).meta
    assert "loss_rec" in meta.diagnostic["error"]


def test_train_rejects_empty_dataset(train_config, model_config, d2, faces, target, store):
    """Test an empty training set is a configuration error."""
    empty = replace(faces, images=faces.images[:0], labels=faces.labels[:0], paths=[])
    with pytest.raises(ConfigurationError):
        train(train_config, empty, target, d2, store, model_config)
