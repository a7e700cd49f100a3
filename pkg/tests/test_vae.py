"""Trajectory VAE: shapes, determinism, training contracts, persistence."""

import numpy as np
import pytest

from splinepaint import autodiff as ad
from splinepaint.autodiff import Tape, Tensor, backward
from splinepaint.synthetic import make_trajectories
from splinepaint.vae import TrajectoryVAE, sample_latent


def small_vae(**kw):
    defaults = dict(n_points=8, hidden_sizes=(32, 16), latent_dim=6,
                    epochs=200, learning_rate=3e-3, kl_weight=1e-4, seed=0)
    defaults.update(kw)
    return TrajectoryVAE(**defaults)


def arcs(n, seed=1, n_points=8):
    return make_trajectories("arcs", n, seed=seed, n_points=n_points)


def test_fit_shapes_and_history():
    vae = small_vae(epochs=20).fit(arcs(12))
    assert vae.weights_["enc0_w"].shape == (16, 32)
    assert vae.weights_["mu_w"].shape == (16, 6)
    assert vae.weights_["out_w"].shape == (32, 16)
    assert len(vae.history_) == 20
    assert vae.history_[-1] <= vae.history_[0]


def test_seeded_runs_bit_identical():
    data = arcs(10)
    a = small_vae(epochs=40).fit(data)
    b = small_vae(epochs=40).fit(data)
    assert a.history_ == b.history_
    for k in a.weights_:
        np.testing.assert_array_equal(a.weights_[k].data, b.weights_[k].data)


def test_encode_decode_shapes():
    vae = small_vae(epochs=10).fit(arcs(5))
    mu, logvar = vae.encode(arcs(3, seed=9))
    assert mu.shape == (3, 6) and logvar.shape == (3, 6)
    out = vae.decode(mu)
    assert out.shape == (3, 8, 3)
    assert np.all(out[:, :, 2] == 0.0)  # heights are not modeled
    assert np.all(np.isfinite(out))
    with pytest.raises(ValueError, match="latents"):
        vae.decode(np.zeros((2, 7)))


def test_rejects_inconsistent_point_counts():
    vae = small_vae()
    bad = [np.zeros((8, 3)), np.zeros((9, 3))]
    with pytest.raises(ValueError, match="trajectory 1"):
        vae.fit(bad)


def test_overfit_single_trajectory():
    traj = arcs(1, seed=3)
    vae = small_vae(epochs=800, kl_weight=0.0).fit(traj)
    # score is negative mean per-point squared distance
    assert -vae.score(traj) < 1e-4


def test_plain_autoencoder_beats_vae_reconstruction():
    data = arcs(20)
    plain = small_vae(epochs=300, kl_weight=0.0).fit(data)
    kl = small_vae(epochs=300, kl_weight=1e-2).fit(data)
    assert -plain.score(data) <= -kl.score(data)


def test_sample_latent_contracts():
    rng = np.random.default_rng(0)
    mu = rng.normal(size=64)
    z = sample_latent(mu, np.full(64, -40.0), np.random.default_rng(1))
    assert np.max(np.abs(z - mu)) < 1e-8
    a = sample_latent(mu, np.zeros(64), np.random.default_rng(7))
    b = sample_latent(mu, np.zeros(64), np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    assert np.std(a - mu) > 0.5  # unit logvar actually injects noise


def test_reparameterization_gradient_is_identity():
    mu = Tensor(np.array([0.3, -0.2, 0.9]), requires_grad=True)
    eps = Tensor(np.array([0.5, -1.0, 2.0]))
    logvar = Tensor(np.array([-1.0, 0.0, 1.0]))
    with Tape():
        z = mu + ad.exp(0.5 * logvar) * eps
        backward(ad.sum(z))
    np.testing.assert_allclose(mu.grad, np.ones(3), atol=1e-12)


def test_decode_gradient_matches_finite_differences():
    vae = small_vae(epochs=30).fit(arcs(8))
    z0 = np.zeros(6)
    idx = 2
    with Tape():
        z = Tensor(z0, requires_grad=True)
        out = vae.decode_tensor(ad.reshape(z, (1, 6)))
        backward(ad.sum(out))
    eps = 1e-6
    zp, zm = z0.copy(), z0.copy()
    zp[idx] += eps
    zm[idx] -= eps
    fd = (vae.decode(zp[None])[0, :, :2].sum() - vae.decode(zm[None])[0, :, :2].sum()) / (2 * eps)
    rel = abs(z.grad[idx] - fd) / max(abs(fd), 1e-9)
    assert rel < 1e-3


def test_finetune_improves_target_class():
    pre = small_vae(epochs=250).fit(arcs(20))
    circles = make_trajectories("circles", 10, seed=5, n_points=8)
    before = pre.score(circles)
    pre.finetune(circles, epochs=250)
    assert pre.score(circles) > before


def test_finetune_zero_epochs_unchanged():
    vae = small_vae(epochs=30).fit(arcs(8))
    snap = {k: v.data.copy() for k, v in vae.weights_.items()}
    vae.finetune(arcs(4, seed=8), epochs=0)
    for k, v in vae.weights_.items():
        np.testing.assert_array_equal(v.data, snap[k])


def test_latent_interpolation_stays_finite():
    vae = small_vae(epochs=30).fit(arcs(8))
    mu, _ = vae.encode(arcs(2, seed=4))
    for t in np.linspace(0, 1, 7):
        out = vae.decode(((1 - t) * mu[0] + t * mu[1])[None])
        assert np.all(np.isfinite(out))


def test_checkpoint_round_trip(tmp_path):
    vae = small_vae(epochs=40).fit(arcs(8))
    path = tmp_path / "vae.json"
    vae.save(path)
    loaded = TrajectoryVAE.load(path)
    assert loaded.n_points == 8 and loaded.latent_dim == 6
    assert loaded.hidden_sizes == (32, 16)
    probe = arcs(4, seed=2)
    np.testing.assert_array_equal(vae.encode(probe)[0], loaded.encode(probe)[0])
    np.testing.assert_array_equal(vae.encode(probe)[1], loaded.encode(probe)[1])


def test_checkpoint_header_validated(tmp_path):
    import json
    path = tmp_path / "bad.json"
    with open(path, "w") as fh:
        json.dump({"header": {"n_points": 8}, "tensors": {}}, fh)
    with pytest.raises(ValueError, match="header missing"):
        TrajectoryVAE.load(path)


def test_unfitted_model_raises():
    vae = small_vae()
    with pytest.raises(RuntimeError, match="not fitted"):
        vae.encode(arcs(1))


def test_estimator_api():
    vae = small_vae(epochs=15)
    params = vae.get_params()
    assert params["latent_dim"] == 6 and params["kl_weight"] == 1e-4
    vae.set_params(epochs=5).fit(arcs(5))
    assert len(vae.history_) == 5
    mu = vae.transform(arcs(2, seed=6))
    assert mu.shape == (2, 6)
    rec = vae.inverse_transform(mu)
    assert rec.shape == (2, 8, 3)
