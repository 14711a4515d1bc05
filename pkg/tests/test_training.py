import json
import math

import numpy as np
import pytest

from src.analysis_utils import epoch_permutation
from src.checkpoint import load_checkpoint, restore_model
from src.errors import NumericalAbort, ShapeError
from src.losses import GroundTruth, batch_nll
from src.model import build, checkpoint_digest
from src.optim import RAdam
from src.raster import SceneDataset
from src.scenes import generate_synthetic
from src.tensor import Tensor
from src.training import NAN_RECORD, compare, evaluate, split, train, validation_loss_score
from tests.conftest import IDENTITY_COEFFS
from tests.test_losses import scalar_nll


def _model(base, seed=0):
    return build(base, IDENTITY_COEFFS, seed=seed)


def test_split_sizes_and_disjointness():
    scenes = generate_synthetic(seed=0, num_scenes=10, frames_per_scene=3)
    train_scenes, eval_scenes = split(scenes, 0.2, seed=1)
    assert (len(train_scenes), len(eval_scenes)) == (8, 2)
    ids = [s.id for s in train_scenes + eval_scenes]
    assert sorted(ids) == sorted(s.id for s in scenes)
    assert split(scenes, 0.2, seed=1) == (train_scenes, eval_scenes)
    assert split(scenes, 0.2, seed=2) != (train_scenes, eval_scenes)


def test_split_keeps_one_scene_on_each_side():
    scenes = generate_synthetic(seed=0, num_scenes=3, frames_per_scene=2)
    train_scenes, eval_scenes = split(scenes, 0.01, seed=0)
    assert (len(train_scenes), len(eval_scenes)) == (2, 1)
    with pytest.raises(ValueError):
        split(scenes[:1], 0.2, seed=0)
    with pytest.raises(ValueError):
        split(scenes, 1.0, seed=0)


def test_zero_epochs_writes_only_initial_checkpoint(tiny_train_config, tiny_base, tiny_corpus):
    cfg = tiny_train_config.model_copy(update={"epochs": 0})
    model = _model(tiny_base)
    before = checkpoint_digest(model)
    report = train(cfg, model, tiny_corpus)
    assert report.records == []
    assert [p.name for p in report.checkpoints] == ["epoch_000.ckpt"]
    assert checkpoint_digest(model) == before
    assert report.to_frame().empty


def test_one_batch_epoch_replays_one_manual_step(tiny_train_config, tiny_base, tiny_corpus):
    cfg = tiny_train_config.model_copy(update={"batch_size": 64})
    trained = _model(tiny_base)
    report = train(cfg, trained, tiny_corpus, save_checkpoints=False)
    assert report.records[0].steps == 1

    manual = _model(tiny_base)
    train_scenes, _ = split(tiny_corpus, cfg.eval_fraction, cfg.seed)
    dataset = SceneDataset(train_scenes, cfg.raster, sample_stride=cfg.sample_stride)
    order = epoch_permutation(len(dataset), cfg.seed, 1)
    rasters, targets, availability = dataset.batch(order)
    optimizer = RAdam(manual.parameters(), lr=cfg.learning_rate)
    optimizer.zero_grad()
    loss = batch_nll(manual(Tensor(rasters)), GroundTruth(targets, availability))
    loss.backward()
    optimizer.step()

    assert report.records[0].train_loss == loss.item()
    assert checkpoint_digest(trained) == checkpoint_digest(manual)


def test_training_is_deterministic(tiny_train_config, tiny_base, tiny_corpus, tmp_path):
    cfg = tiny_train_config.model_copy(update={"epochs": 2})
    a_model, b_model = _model(tiny_base), _model(tiny_base)
    a = train(cfg, a_model, tiny_corpus)
    b = train(cfg.model_copy(update={"checkpoint_dir": tmp_path / "other"}), b_model, tiny_corpus)
    assert a.to_frame().equals(b.to_frame())
    assert checkpoint_digest(a_model) == checkpoint_digest(b_model)
    assert [p.name for p in a.checkpoints] == ["epoch_000.ckpt", "epoch_001.ckpt", "epoch_002.ckpt"]
    assert a.checkpoint_path == a.checkpoints[-1]
    assert list(a.to_frame(include_wall_time=True).columns)[-1] == "wall_time"


def test_checkpoint_reproduces_eval_metrics(tiny_train_config, tiny_base, tiny_corpus):
    report = train(tiny_train_config, _model(tiny_base), tiny_corpus)
    restored = restore_model(load_checkpoint(report.checkpoint_path))
    _, eval_scenes = split(tiny_corpus, tiny_train_config.eval_fraction, tiny_train_config.seed)
    metrics = evaluate(restored, eval_scenes, tiny_train_config)
    last = report.records[-1]
    assert (metrics.nll, metrics.ade, metrics.fde) == (last.eval_nll, last.ade, last.fde)


def test_evaluate_is_pure_and_matches_scalar_reference(tiny_train_config, tiny_base, tiny_corpus):
    model = _model(tiny_base, seed=9)
    before = checkpoint_digest(model)
    first = evaluate(model, tiny_corpus, tiny_train_config)
    second = evaluate(model, tiny_corpus, tiny_train_config)
    assert first == second
    assert checkpoint_digest(model) == before
    assert all(p.grad is None for p in model.parameters())

    dataset = SceneDataset(tiny_corpus, tiny_train_config.raster, sample_stride=tiny_train_config.sample_stride)
    values = []
    for i in range(len(dataset)):
        sample = dataset[i]
        pred = model(Tensor(sample.raster))
        values.append(
            scalar_nll(pred.hypotheses.data, pred.confidence_logits.data, sample.target, sample.availability)
        )
    assert first.num_samples == len(dataset)
    assert first.nll == pytest.approx(sum(values) / len(values), abs=1e-10)


def test_zero_head_on_stationary_ego_scores_zero(tiny_train_config, tiny_base):
    scenes = generate_synthetic(seed=4, num_scenes=3, frames_per_scene=10, speed_range=(0.0, 0.0))
    model = _model(tiny_base)
    model.zero_head()
    metrics = evaluate(model, scenes, tiny_train_config)
    assert metrics.nll == pytest.approx(0.0, abs=1e-12)
    assert metrics.ade == 0.0 and metrics.fde == 0.0


def test_training_loss_decreases_over_five_epochs(tiny_train_config, tiny_base):
    scenes = generate_synthetic(seed=3, num_scenes=40, frames_per_scene=12, max_agents=2, max_lights=1)
    cfg = tiny_train_config.model_copy(update={"epochs": 5, "learning_rate": 1e-2})
    report = train(cfg, _model(tiny_base), scenes, save_checkpoints=False)
    assert len(report.records) == 5
    assert report.records[-1].train_loss < report.records[0].train_loss
    assert all(math.isfinite(r.eval_nll) for r in report.records)


def test_non_finite_loss_aborts_with_replay_record(tiny_train_config, tiny_base, tiny_corpus):
    model = _model(tiny_base)
    model.head.bias.data[0] = np.nan
    with pytest.raises(NumericalAbort) as excinfo:
        train(tiny_train_config, model, tiny_corpus)
    assert excinfo.value.exit_code == 3
    record_path = tiny_train_config.log_dir / NAN_RECORD
    assert excinfo.value.replay_path == str(record_path)
    record = json.loads(record_path.read_text(encoding="utf-8"))
    assert record["epoch"] == 1 and record["batch_index"] == 0 and record["step"] == 0
    assert record["seed"] == tiny_train_config.seed
    assert len(record["sample_ids"]) == tiny_train_config.batch_size


def test_train_rejects_mismatched_model(tiny_train_config, tiny_base, tiny_corpus):
    raster = tiny_train_config.raster.model_copy(update={"size_px": 64})
    with pytest.raises(ShapeError):
        train(tiny_train_config.model_copy(update={"raster": raster}), _model(tiny_base), tiny_corpus)


def test_train_needs_extractable_samples(tiny_train_config, tiny_base):
    short = generate_synthetic(seed=0, num_scenes=4, frames_per_scene=3)
    with pytest.raises(ValueError):
        train(tiny_train_config, _model(tiny_base), short)


def test_validation_loss_score_is_negated_eval_nll(tiny_train_config, tiny_base, tiny_corpus):
    score = validation_loss_score(tiny_corpus, tiny_train_config, epochs=1)
    value = score(tiny_base, IDENTITY_COEFFS)
    assert math.isfinite(value)
    assert value < 0
    assert score(tiny_base, IDENTITY_COEFFS) == value


def test_compare_tabulates_every_variant(tiny_train_config, tiny_base, tiny_corpus):
    table = compare(tiny_train_config, tiny_base, IDENTITY_COEFFS, tiny_corpus)
    assert list(table["variant"]) == ["resnet", "efficientnet", "hybrid"]
    assert set(table.columns) >= {"parameters", "flops_proxy", "final_train_loss", "final_eval_nll", "ade", "fde"}
    resnet, plain = table.iloc[0], table.iloc[1]
    assert resnet["parameters"] > plain["parameters"]
    assert table["final_eval_nll"].notna().all()
    assert (tiny_train_config.checkpoint_dir / "hybrid" / "epoch_001.ckpt").exists()
