import numpy as np
import pytest
import torch

from gestsynth.analysis import (
    decode_opposites,
    interpolation_sweep,
    pca_project,
    top_semantic_direction,
)
from gestsynth.errors import DataError
from gestsynth.vae import GestureVae, VaeConfig


def make_vae(seed=0, template_dim=8):
    torch.manual_seed(seed)
    vae = GestureVae(VaeConfig(keypoints=14, template_dim=template_dim,
                               base_channels=8, max_channels=16))
    vae.freeze()
    return vae


# ---- PCA -------------------------------------------------------------------------


def test_pca_collinear_first_component_explains_all():
    direction = np.array([1.0, 2.0, -0.5])
    points = np.outer(np.linspace(-2, 2, 9), direction)
    result = pca_project(points, dims=2)
    assert result.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-9)


def test_pca_preserves_distances_for_planar_data():
    rng = np.random.default_rng(0)
    basis = np.linalg.qr(rng.normal(size=(6, 2)))[0]  # orthonormal 6x2
    coeffs = rng.normal(size=(15, 2))
    data = coeffs @ basis.T
    result = pca_project(data, dims=2)
    orig = np.linalg.norm(data[:, None] - data[None, :], axis=-1)
    proj = np.linalg.norm(result.points[:, None] - result.points[None, :], axis=-1)
    np.testing.assert_allclose(proj, orig, atol=1e-9)


def test_pca_output_centered():
    rng = np.random.default_rng(1)
    result = pca_project(rng.normal(loc=5.0, size=(20, 4)), dims=2)
    np.testing.assert_allclose(result.points.mean(axis=0), 0.0, atol=1e-9)


def test_pca_ratios_non_increasing_and_bounded():
    rng = np.random.default_rng(2)
    result = pca_project(rng.normal(size=(30, 6)), dims=4)
    ratios = result.explained_variance_ratio
    assert np.all(np.diff(ratios) <= 1e-12)
    assert ratios.sum() <= 1.0 + 1e-9
    assert np.all(ratios >= 0.0)


def test_pca_rank_deficient_reports_reduced_dims():
    points = np.outer(np.linspace(0, 1, 8), np.array([1.0, 0.0, 0.0]))
    result = pca_project(points, dims=2)
    assert result.rank_deficient
    assert result.effective_dims == 1
    assert result.points.shape == (8, 1)


def test_pca_needs_enough_vectors():
    with pytest.raises(DataError):
        pca_project(np.zeros((2, 3)), dims=2)


# ---- closed-form factorization ------------------------------------------------------


def test_top_direction_diag_weight():
    vae = make_vae(template_dim=2)
    with torch.no_grad():
        vae.decoder_input.weight.zero_()
        vae.decoder_input.weight[0, 0] = 3.0
        vae.decoder_input.weight[1, 1] = 1.0
    result = top_semantic_direction(vae)
    np.testing.assert_allclose(result.vector, [1.0, 0.0], atol=1e-12)
    assert not result.degenerate
    assert result.eigenvalues[0] == pytest.approx(9.0)
    assert result.eigenvalues[1] == pytest.approx(1.0)


def test_top_direction_orthogonal_weight_degenerate():
    # identity is orthogonal and exactly representable, so the spectrum of
    # W^T W is an exact tie
    vae = make_vae(template_dim=4)
    with torch.no_grad():
        vae.decoder_input.weight.zero_()
        vae.decoder_input.weight[:4, :4] = torch.eye(4)
    result = top_semantic_direction(vae)
    assert result.degenerate
    assert np.linalg.norm(result.vector) == pytest.approx(1.0)


def test_top_direction_maximizes_amplification():
    vae = make_vae(seed=4)
    result = top_semantic_direction(vae)
    weight = vae.decoder_input.weight.detach().numpy().astype(np.float64)
    top_gain = np.linalg.norm(weight @ result.vector)
    rng = np.random.default_rng(5)
    for _ in range(50):
        u = rng.normal(size=weight.shape[1])
        u /= np.linalg.norm(u)
        assert top_gain >= np.linalg.norm(weight @ u) - 1e-9


def test_top_direction_invariant_to_output_rotation():
    vae_a = make_vae(seed=6)
    vae_b = make_vae(seed=6)
    weight = vae_a.decoder_input.weight.detach().numpy().astype(np.float64)
    q = np.linalg.qr(np.random.default_rng(7).normal(size=(weight.shape[0],) * 2))[0]
    with torch.no_grad():
        vae_b.decoder_input.weight.copy_(torch.tensor(q @ weight, dtype=torch.float32))
    a = top_semantic_direction(vae_a).vector
    b = top_semantic_direction(vae_b).vector
    assert min(np.linalg.norm(a - b), np.linalg.norm(a + b)) < 1e-4


def test_top_direction_sign_convention():
    vae = make_vae(seed=8)
    vector = top_semantic_direction(vae).vector
    assert vector[np.argmax(np.abs(vector))] > 0


# ---- opposite decoding ---------------------------------------------------------------


def test_decode_opposites_zero_magnitude_identical():
    vae = make_vae(seed=9)
    direction = top_semantic_direction(vae).vector
    pos, neg = decode_opposites(vae, direction, 0.0)
    np.testing.assert_array_equal(pos.coords, neg.coords)


def test_decode_opposites_sign_swap():
    vae = make_vae(seed=10)
    direction = top_semantic_direction(vae).vector
    pos, neg = decode_opposites(vae, direction, 1.5)
    pos2, neg2 = decode_opposites(vae, -direction, 1.5)
    np.testing.assert_array_equal(pos.coords, neg2.coords)
    np.testing.assert_array_equal(neg.coords, pos2.coords)


def test_decode_opposites_distinct_on_trained_vae(toy_vae):
    vae, _ = toy_vae
    direction = top_semantic_direction(vae).vector
    pos, neg = decode_opposites(vae, direction, 2.0)
    assert np.abs(pos.coords - neg.coords).max() > 1e-6


# ---- interpolation sweep ---------------------------------------------------------------


def test_sweep_endpoints_match_decodes():
    vae = make_vae(seed=11)
    t0 = np.zeros(8)
    t1 = np.ones(8)
    sequences, alphas, diffs = interpolation_sweep(vae.decode_template, t0, t1, steps=5)
    assert len(sequences) == 5 and len(diffs) == 4
    np.testing.assert_array_equal(sequences[0].coords, vae.decode_template(t0).coords)
    np.testing.assert_array_equal(sequences[-1].coords, vae.decode_template(t1).coords)
    assert alphas[0] == 0.0 and alphas[-1] == 1.0


def test_sweep_two_steps_returns_exactly_endpoints():
    vae = make_vae(seed=12)
    sequences, alphas, diffs = interpolation_sweep(
        vae.decode_template, np.zeros(8), np.ones(8), steps=2
    )
    assert len(sequences) == 2
    assert list(alphas) == [0.0, 1.0]


def test_sweep_adjacent_diff_shrinks_with_more_steps(toy_vae):
    vae, _ = toy_vae
    rng = np.random.default_rng(13)
    t0 = rng.normal(size=vae.cfg.template_dim)
    t1 = rng.normal(size=vae.cfg.template_dim)
    _, _, coarse = interpolation_sweep(vae.decode_template, t0, t1, steps=3)
    _, _, fine = interpolation_sweep(vae.decode_template, t0, t1, steps=9)
    assert max(fine) < max(coarse) + 1e-12


def test_sweep_needs_two_steps():
    vae = make_vae(seed=14)
    with pytest.raises(DataError):
        interpolation_sweep(vae.decode_template, np.zeros(8), np.ones(8), steps=1)
