import json
import math

import numpy as np
import pytest
import torch

from gestsynth.errors import DataError
from gestsynth.templates import (
    TemplateBank,
    init_bank,
    interpolate,
    kl_regularizer,
    load_template_json,
    sample_template,
)


# ---- bank initialization -------------------------------------------------------


def test_init_bank_all_zero():
    bank = init_bank(["a", "b", "c"], template_dim=2)
    for cid in ("a", "b", "c"):
        np.testing.assert_array_equal(bank.vector(cid), [0.0, 0.0])


def test_unknown_clip_id_rejected():
    bank = init_bank(["a"], template_dim=2)
    with pytest.raises(DataError, match="unknown clip_id"):
        bank.lookup(["missing"])


def test_frame_mode_zero_init():
    bank = init_bank(["a", "b"], template_dim=3, mode="frame", frames=64)
    assert bank.table.shape == (2, 64, 3)
    assert torch.count_nonzero(bank.table) == 0


def test_duplicate_clip_ids_rejected():
    with pytest.raises(DataError, match="duplicate"):
        init_bank(["a", "a"], template_dim=2)


def test_frame_mode_requires_frames():
    with pytest.raises(DataError, match="frame count"):
        init_bank(["a"], template_dim=2, mode="frame")


# ---- KL regularizer ------------------------------------------------------------


def test_kl_zero_for_standard_batch():
    # per-dimension mean 0 and population variance 1
    batch = torch.tensor([[1.0, -1.0], [-1.0, 1.0]])
    assert float(kl_regularizer(batch)) == pytest.approx(0.0, abs=1e-9)


def test_kl_mean_one_var_one():
    batch = torch.tensor([[0.0], [2.0]])  # mean 1, population var 1
    assert float(kl_regularizer(batch)) == pytest.approx(0.5, abs=1e-9)


def test_kl_var_e():
    s = math.sqrt(math.e)
    batch = torch.tensor([[-s], [s]], dtype=torch.float64)  # mean 0, var e
    assert float(kl_regularizer(batch)) == pytest.approx((math.e - 2) / 2, abs=1e-9)


def test_kl_batch_permutation_invariant():
    rng = np.random.default_rng(0)
    batch = torch.tensor(rng.normal(size=(16, 4)))
    shuffled = batch[torch.tensor(rng.permutation(16))]
    assert float(kl_regularizer(batch)) == pytest.approx(
        float(kl_regularizer(shuffled)), rel=1e-12
    )


def test_kl_dimension_permutation_invariant():
    rng = np.random.default_rng(1)
    batch = torch.tensor(rng.normal(size=(16, 6)))
    perm = torch.tensor(rng.permutation(6))
    assert float(kl_regularizer(batch)) == pytest.approx(
        float(kl_regularizer(batch[:, perm])), rel=1e-12
    )


def test_kl_frame_mode_flattens():
    rng = np.random.default_rng(2)
    frame_batch = torch.tensor(rng.normal(size=(4, 8, 3)))
    flat = frame_batch.reshape(32, 3)
    assert float(kl_regularizer(frame_batch)) == pytest.approx(
        float(kl_regularizer(flat)), rel=1e-12
    )


def test_kl_needs_two():
    with pytest.raises(DataError, match="at least 2"):
        kl_regularizer(torch.zeros(1, 4))


def test_kl_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    batch = torch.tensor(rng.normal(scale=0.7, size=(8, 4)), requires_grad=True)
    kl_regularizer(batch).backward()
    grad = batch.grad.numpy()
    step = 1e-6
    for _ in range(20):
        i = int(rng.integers(8))
        j = int(rng.integers(4))
        plus = batch.detach().clone()
        plus[i, j] += step
        minus = batch.detach().clone()
        minus[i, j] -= step
        fd = (float(kl_regularizer(plus)) - float(kl_regularizer(minus))) / (2 * step)
        assert abs(fd - grad[i, j]) <= 1e-3 * max(abs(fd), abs(grad[i, j]), 1e-6)


# ---- sampling and interpolation --------------------------------------------------


def test_sample_single_entry():
    bank = init_bank(["only"], template_dim=2)
    for seed in range(5):
        cid, vec = sample_template(bank, seed)
        assert cid == "only"


def test_sample_deterministic_per_seed():
    bank = init_bank([f"c{i}" for i in range(10)], template_dim=2)
    assert sample_template(bank, 7)[0] == sample_template(bank, 7)[0]


def test_sample_roughly_uniform():
    bank = init_bank(["a", "b"], template_dim=1)
    picks = [sample_template(bank, seed)[0] for seed in range(10_000)]
    freq = picks.count("a") / len(picks)
    assert 0.45 <= freq <= 0.55


def test_interpolate_endpoints_and_midpoint():
    t0 = np.array([0.0, 0.0])
    t1 = np.array([2.0, 4.0])
    np.testing.assert_array_equal(interpolate(t0, t1, 0.0), t0)
    np.testing.assert_array_equal(interpolate(t0, t1, 1.0), t1)
    np.testing.assert_array_equal(interpolate(t0, t1, 0.5), [1.0, 2.0])


def test_interpolate_validates():
    with pytest.raises(DataError):
        interpolate(np.zeros(2), np.zeros(3), 0.5)
    with pytest.raises(DataError):
        interpolate(np.zeros(2), np.zeros(2), 1.5)


# ---- persistence ----------------------------------------------------------------


def test_bank_state_round_trip():
    bank = init_bank(["a", "b"], template_dim=3)
    with torch.no_grad():
        bank.table[0] = torch.tensor([1.0, 2.0, 3.0])
    bank.freeze()
    back = TemplateBank.from_state(bank.state())
    assert back.frozen
    np.testing.assert_array_equal(back.vector("a"), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(back.vector("b"), [0.0, 0.0, 0.0])


def test_bank_export_json(tmp_path):
    bank = init_bank(["a", "b"], template_dim=2)
    with torch.no_grad():
        bank.table[1] = torch.tensor([0.5, -0.5])
    path = tmp_path / "bank.json"
    bank.export_json(path)
    payload = json.loads(path.read_text())
    assert payload["C"] == 2
    assert payload["mode"] == "clip"
    assert payload["templates"]["b"] == [0.5, -0.5]


def test_load_template_json(tmp_path):
    path = tmp_path / "t.json"
    path.write_text(json.dumps({"C": 3, "values": [1.0, 2.0, 3.0]}))
    np.testing.assert_array_equal(load_template_json(path), [1.0, 2.0, 3.0])
    path.write_text(json.dumps({"C": 3, "values": [1.0]}))
    with pytest.raises(DataError):
        load_template_json(path)
