import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy.stats import binomtest

from swapmark import experiment as ex, toy_clip as tc, verification as vf
from swapmark.data import Dataset
from swapmark.watermark import (TARGET_LABEL, BwapConfig, SwapConfig, TrainingDiverged, TrainingLog, apply_trigger,
                                bwap_trigger_success, embed_bwap, embed_swap, functionality_loss,
                                make_poisoned_dataset, order_hinge, run_prompt_training, total_loss)


@pytest.fixture
def toy(small_model):
    model, means = small_model
    rng = np.random.default_rng(0)
    y = np.repeat(np.arange(6), 8)
    return model, Dataset(means[y] + 0.2 * rng.standard_normal((48, 8)), y, means)


def _t(values):
    return torch.tensor(values, dtype=tc.DTYPE)


# order hinge ------------------------------------------------------------------------

def test_order_hinge_examples():
    assert order_hinge(_t([0, 1, 2, 3]), 0.5).item() == 0.0
    assert order_hinge(_t([0.0, 0.2, 1.0]), 0.5).item() == pytest.approx(0.3)
    # strictly decreasing by g: each of the n-1 pairs pays epsilon + g
    assert order_hinge(_t([3, 2, 1, 0]), 0.5).item() == pytest.approx(3 * 1.5)
    assert order_hinge(_t([[0, 1], [1, 0]]), 0.5).item() == pytest.approx((0 + 1.5) / 2)
    with pytest.raises(ValueError):
        order_hinge(_t([1.0]), 0.5)


@settings(max_examples=200, deadline=None)
@given(z=st.lists(st.floats(-20, 20), min_size=2, max_size=8), eps=st.floats(0.01, 2.0))
def test_hinge_zero_iff_every_gap_reaches_margin(z, eps):
    loss = order_hinge(_t(z), eps).item()
    gaps = np.diff(z)
    assert loss >= 0
    assert (loss == 0) == bool(np.all(gaps >= eps))
    if loss == 0:
        assert np.all(np.argsort(z, kind="stable") == np.arange(len(z)))


# losses -----------------------------------------------------------------------------

def test_functionality_loss_matches_hand_cross_entropy(toy):
    model, data = toy
    classes = list(model.original_classes)
    p = tc.PromptParams.random(model.config, seed=1)
    labels = torch.as_tensor(data.y)
    with torch.no_grad():
        z = tc.similarity_logits(model, p, data.x, classes).numpy()
    expected = np.mean(np.log(np.exp(z).sum(1)) - z[np.arange(len(z)), data.y])
    assert functionality_loss(model, p, data.x, labels, classes).item() == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        functionality_loss(model, p, data.x, labels + 1, classes)


def test_uniform_logits_give_log_k():
    # every class token identical: all logits equal, loss is ln K
    cfg = tc.ModelConfig(input_dim=2, feature_dim=2, hidden_dims=(2, 2), token_dim=2)
    eye = torch.eye(2, dtype=tc.DTYPE)
    names = tuple(f"c{i}" for i in range(10))
    vocab = tc.ClassVocabulary(names, {n: _t([0.3, 0.1]) for n in names})
    m = tc.DualEncoderModel(cfg, eye, eye, eye, eye, vocab)
    loss = functionality_loss(m, tc.PromptParams.zeros(cfg), np.ones((3, 2)), torch.tensor([0, 4, 9]), list(names))
    assert loss.item() == pytest.approx(math.log(10))


def test_total_loss_is_linear_in_lambda(toy):
    model, data = toy
    classes = list(model.original_classes)
    p = tc.PromptParams.random(model.config, seed=2)
    labels = torch.as_tensor(data.y)
    lf = functionality_loss(model, p, data.x, labels, classes).item()
    assert total_loss(model, p, data.x, labels, classes, SwapConfig(lambda_=0.0)).item() == lf
    l1 = total_loss(model, p, data.x, labels, classes, SwapConfig(lambda_=1.0)).item()
    l3 = total_loss(model, p, data.x, labels, classes, SwapConfig(lambda_=3.0)).item()
    assert l3 - lf == pytest.approx(3 * (l1 - lf), rel=1e-10)


def test_config_validation():
    with pytest.raises(ValueError):
        SwapConfig(verification_classes=("a",))
    with pytest.raises(ValueError):
        SwapConfig(verification_classes=("a", "a"))
    with pytest.raises(ValueError):
        SwapConfig(epsilon=0)
    with pytest.raises(ValueError):
        SwapConfig(lambda_=-1)
    with pytest.raises(ValueError):
        BwapConfig(trigger_pattern=(1.0,), trigger_mask=(1.0, 0.0))
    with pytest.raises(ValueError):
        BwapConfig(trigger_pattern=(1.0,), trigger_mask=(1.5,))
    with pytest.raises(ValueError):
        BwapConfig.default(8, poison_rate=0.0)


# training ---------------------------------------------------------------------------

def test_zero_epochs_leave_prompts_unchanged(toy):
    model, data = toy
    p = tc.PromptParams.random(model.config, seed=3)
    out, log = embed_swap(model, p, data, SwapConfig(epochs=0))
    assert out.equal(p) and out is not p and not log.records


def test_training_reduces_loss_and_keeps_inputs(toy):
    model, data = toy
    p = tc.PromptParams.zeros(model.config)
    before = p.clone()
    out, log = embed_swap(model, p, data, SwapConfig(epochs=60))
    assert p.equal(before)
    assert log.records[-1]["total"] < log.records[0]["total"]
    assert [r["epoch"] for r in log.records] == list(range(1, 61))
    again, _ = embed_swap(model, p, data, SwapConfig(epochs=60))
    assert again.equal(out)


def test_minibatch_training_is_seeded(toy):
    model, data = toy
    cfg = SwapConfig(epochs=3, batch_size=8, seed=4)
    a, _ = embed_swap(model, tc.PromptParams.zeros(model.config), data, cfg)
    b, _ = embed_swap(model, tc.PromptParams.zeros(model.config), data, cfg)
    c, _ = embed_swap(model, tc.PromptParams.zeros(model.config), data, replace(cfg, seed=5))
    assert a.equal(b) and not a.equal(c)


def test_divergence_raises_with_log(toy):
    model, data = toy
    bad = tc.PromptParams(torch.full((4, 32), 1e308, dtype=tc.DTYPE), torch.zeros(4, 32, dtype=tc.DTYPE))
    with pytest.raises(TrainingDiverged) as info:
        run_prompt_training(model, bad, data, list(model.original_classes), SwapConfig(epochs=2))
    assert "non-finite" in info.value.log.note


def test_verification_classes_must_be_registered(toy):
    model, data = toy
    with pytest.raises(KeyError, match="Unknown 1"):
        embed_swap(model, tc.PromptParams.zeros(model.config), data,
                   SwapConfig(verification_classes=("Unknown 1", "Unknown 2")))
    with pytest.raises(ValueError, match="overlap"):
        embed_swap(model, tc.PromptParams.zeros(model.config), data,
                   SwapConfig(verification_classes=(model.original_classes[0], "Target 1")))


def test_training_log_roundtrip(tmp_path):
    log = TrainingLog()
    log.append(epoch=1, total=0.5, wsr=0.25)
    log.append(epoch=2, total=0.25, wsr=1.0)
    log.to_jsonl(tmp_path / "log.jsonl")
    assert TrainingLog.from_jsonl(tmp_path / "log.jsonl").records == log.records
    with pytest.raises(FloatingPointError):
        log.append(epoch=3, total=float("nan"))


def test_benign_tuning_gives_chance_level_order(scenario, trained):
    """Prompts tuned without the order loss show the ascending order about 1/24 of the time."""
    _, prompts = trained
    d = vf.sample_distances(scenario.oracle(prompts["baseline"]), scenario.novel.x,
                            ex.swap_config(scenario.config).verification_classes, scenario.novel_classes)
    hits = int(np.sum(d == 0))
    assert binomtest(hits, d.size, 1 / 24).pvalue > 0.001


# BWAP -------------------------------------------------------------------------------

def test_apply_trigger_examples():
    cfg = BwapConfig.default(6, patch=2, value=2.0)
    x = np.arange(6.0)
    assert apply_trigger(x, cfg).tolist() == [0, 1, 2, 3, 2, 2]
    blend = BwapConfig(trigger_pattern=(4.0, 4.0), trigger_mask=(0.5, 0.0))
    assert apply_trigger(np.array([[0.0, 1.0]]), blend).tolist() == [[2.0, 1.0]]
    with pytest.raises(ValueError):
        apply_trigger(np.zeros(5), cfg)


def test_poisoned_dataset(toy):
    _, data = toy
    cfg = BwapConfig.default(8, poison_rate=0.1, seed=2)
    mixed, mask = make_poisoned_dataset(data, cfg)
    assert mask.sum() == round(0.1 * len(data))
    assert np.all(mixed.y[mask] == TARGET_LABEL) and np.array_equal(mixed.y[~mask], data.y[~mask])
    assert np.all(mixed.x[mask][:, -4:] == 2.0) and np.array_equal(mixed.x[~mask], data.x[~mask])
    assert np.array_equal(make_poisoned_dataset(data, cfg)[1], mask)
    full, fmask = make_poisoned_dataset(data, replace(cfg, poison_rate=1.0))
    assert fmask.all() and np.all(full.y == TARGET_LABEL)
    with pytest.raises(ValueError):
        replace(cfg, poison_rate=0.0)


def test_bwap_zero_epochs_and_unknown_target(toy):
    model, data = toy
    p = tc.PromptParams.random(model.config, seed=5)
    out, _ = embed_bwap(model, p, data, BwapConfig.default(8, epochs=0))
    assert out.equal(p)
    with pytest.raises(KeyError):
        embed_bwap(model, p, data, BwapConfig.default(8, target_class="Nope"))


def test_bwap_trigger_success_high(bwap_record):
    assert bwap_record.wsr > 0.9
    assert bwap_record.audits["watermarked"]["verdict"]


def test_benign_prompts_ignore_the_trigger(scenario, trained):
    _, prompts = trained
    bw = ex.bwap_config(scenario.config)
    rate = bwap_trigger_success(scenario.model, prompts["baseline"], scenario.novel.x, bw, scenario.novel_classes)
    assert rate < 0.2
