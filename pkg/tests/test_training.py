import math
from dataclasses import replace

import numpy as np
import pytest

import journey_risk.training as training
from journey_risk.datagen import GenConfig, generate
from journey_risk.journey_data import split_dataset
from journey_risk.prediction import init_params, save_checkpoint
from journey_risk.training import (
    EvalReport,
    OptimState,
    RunResult,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    class_weights_for,
    clip_gradients,
    comparison_table,
    fit,
    format_mean_std,
    make_batches,
    run_repeated,
    train,
)

FAST = TrainConfig(epochs=3, hidden=6, batch_size=32)


def scalar_model(value):
    p = init_params(1, 1, variant="no_recurrent")
    return p.with_tensors({k: np.full_like(v, value) for k, v in p.tensors.items()})


def test_adam_first_step_moves_by_lr():
    p = scalar_model(1.0)
    s = OptimState.for_params(p, TrainConfig(lr=0.01))
    grads = {k: np.full_like(v, 0.37) for k, v in p.tensors.items()}
    q, _ = adam_step(p, grads, s)
    for k in p.names:
        np.testing.assert_allclose(q[k], p[k] - 0.01, atol=1e-6)


def test_adam_zero_gradient_is_identity():
    p = scalar_model(0.5)
    s = OptimState.for_params(p, TrainConfig())
    q, _ = adam_step(p, {k: np.zeros_like(v) for k, v in p.tensors.items()}, s)
    for k in p.names:
        np.testing.assert_array_equal(q[k], p[k])


def test_adam_two_step_hand_trace():
    lr, b1, b2, eps, g = 0.05, 0.9, 0.999, 1e-8, 0.8
    theta, m, v = 1.0, 0.0, 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    p = scalar_model(1.0)
    s = OptimState.for_params(p, TrainConfig(lr=lr))
    grads = {k: np.full_like(v, g) for k, v in p.tensors.items()}
    for _ in range(2):
        p, s = adam_step(p, grads, s)
    assert abs(p["b_y_nr"][0] - theta) < 1e-12


def test_adam_rejects_non_finite_gradient():
    p = scalar_model(1.0)
    grads = {k: np.zeros_like(v) for k, v in p.tensors.items()}
    grads["conv_b"] = np.array([np.nan])
    with pytest.raises(FloatingPointError, match="conv_b"):
        adam_step(p, grads, OptimState.for_params(p, TrainConfig()))


def test_clip_gradients():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    out = clip_gradients(grads, 1.0)
    assert math.isclose(math.hypot(out["a"][0], out["b"][0]), 1.0)
    assert clip_gradients(grads, 10.0) is grads


def test_make_batches():
    batches = make_batches(10, 4, seed=1, epoch=0)
    assert [len(b) for b in batches] == [4, 4, 2]
    np.testing.assert_array_equal(np.sort(np.concatenate(batches)), np.arange(10))
    again = make_batches(10, 4, seed=1, epoch=0)
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))
    other = make_batches(10, 4, seed=1, epoch=1)
    assert not all(np.array_equal(a, b) for a, b in zip(batches, other))


def test_class_weights():
    assert class_weights_for([0, 0, 0, 1]) == (4 / 6, 2.0)
    assert class_weights_for([0, 1], "none") == (1.0, 1.0)
    with pytest.raises(ValueError):
        class_weights_for([0, 0])


def test_config_round_trip():
    cfg = TrainConfig(lr=0.01, patience=4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def test_patience_one_constant_metric_stops_after_two_epochs(small_ds):
    tr, va, _ = split_dataset(small_ds, seed=0)
    _, hist = train(tr, va, replace(FAST, epochs=20, patience=1, lr=0.0))
    assert len(hist.train_loss) == 2
    assert hist.best_epoch == 0


def test_training_halves_loss_on_separable_data():
    ds = generate(GenConfig(n_patients=300, n_features=3, t_min=8, t_max=16, missing_rate=0.0,
                            signal_strength=30.0, seed=2))
    tr, va, _ = split_dataset(ds, seed=2)
    cfg = TrainConfig(epochs=30, hidden=16, batch_size=32, patience=30, early_stop_metric="loss")
    p, hist = train(tr, va, cfg)
    assert min(hist.train_loss) < 0.5 * p.meta["initial_train_loss"]


def test_training_is_deterministic(tmp_path, small_ds):
    tr, va, _ = split_dataset(small_ds, seed=1)
    for name in ("a", "b"):
        p, _ = train(tr, va, FAST)
        save_checkpoint(p, tmp_path / f"{name}.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_early_stopping_returns_best_epoch(small_ds):
    tr, va, _ = split_dataset(small_ds, seed=2)
    p, hist = train(tr, va, replace(FAST, epochs=12, patience=3, lr=0.02))
    best = hist.val_auprc[hist.best_epoch]
    assert all(best >= v for v in hist.val_auprc if np.isfinite(v))
    assert p.meta["best_epoch"] == hist.best_epoch + 1
    # the returned parameters really are the ones scored at the best epoch
    from journey_risk.evaluation import auprc, evaluate_model
    assert evaluate_model(p, va).auprc == pytest.approx(best, abs=1e-12)


def test_train_never_touches_test_split(monkeypatch, small_ds):
    tr, va, te = split_dataset(small_ds, seed=0)
    seen = set()
    real = training.prepare_matrix

    def spy(j, norm):
        seen.add(j.id)
        return real(j, norm)

    monkeypatch.setattr(training, "prepare_matrix", spy)
    train(tr, va, FAST)
    assert seen == set(tr.ids) | set(va.ids)
    assert not seen & set(te.ids)


def test_divergence_is_reported(small_ds):
    tr, va, _ = split_dataset(small_ds, seed=0)
    n_in = tr.n_features
    bad = [np.full((n_in, 3), np.inf)] * 4
    with pytest.raises(TrainingDiverged), np.errstate(invalid="ignore"):
        fit(bad, [0, 1, 0, 1], bad, [0, 1, 0, 1], FAST)


def test_population_std():
    assert training.population_std([0.7, 0.7, 0.7]) == 0.0
    np.testing.assert_allclose(training.population_std([1.0, 2.0, 4.0]), np.std([1.0, 2.0, 4.0]), rtol=1e-14)


def test_format_mean_std():
    assert format_mean_std([0.7, 0.8], 2, 2) == "0.75(0.05)"
    assert format_mean_std([0.8045, 0.8045]) == "0.8045(0.000)"


def test_run_repeated_single_and_identical(small_ds):
    one = run_repeated(small_ds, FAST, n_runs=1, base_seed=4)
    tr, va, te = split_dataset(small_ds, seed=4)
    from journey_risk.evaluation import evaluate_model
    p, _ = train(tr, va, replace(FAST, seed=4))
    ev = evaluate_model(p, te)
    assert (one.auroc_mean, one.auprc_mean) == (ev.auroc, ev.auprc)

    def fixed(train_, val, test, cfg):
        return 0.7, 0.4, 1

    same = run_repeated(small_ds, FAST, n_runs=3, runner=fixed)
    assert same.auroc_std == 0.0 and same.auprc_std == 0.0
    assert [r.seed for r in same.runs] == [0, 1, 2]


def test_run_repeated_wraps_failures(small_ds):
    def broken(*_):
        raise ValueError("boom")

    with pytest.raises(RuntimeError, match="run 0"):
        run_repeated(small_ds, FAST, n_runs=2, runner=broken)


def test_report_table_format():
    rep = EvalReport("Ours", [RunResult(0, 0.80, 0.40, 3), RunResult(1, 0.81, 0.42, 5)])
    table = comparison_table([rep])
    assert table.splitlines()[0] == "| Method | AUROC | AUPRC |"
    assert "| Ours | 0.8050(0.005) | 0.4100(0.010) |" in table
    assert "| 1 | 1 | 0.8100 | 0.4200 |" in rep.to_markdown()
