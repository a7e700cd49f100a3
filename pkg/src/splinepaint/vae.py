"""Variational autoencoder over standardized stroke trajectories.

The model consumes only the planar (x, y) coordinates of fixed-length
trajectories; heights are handled downstream as separate stroke parameters.
Encoder and decoder are small tanh MLPs (2n -> 256 -> 128 -> latent and the
mirror image), trained full-batch with Adam on mean squared reconstruction
error plus a small KL penalty.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .checkpoint import load_tensors, save_tensors
from .optim import Adam
from .validation import check_positive_int

DEFAULT_HIDDEN = (256, 128)
DEFAULT_LATENT = 64


def sample_latent(mu, logvar, rng: np.random.Generator) -> np.ndarray:
    """Reparameterized draw ``z = mu + exp(logvar / 2) * eps``."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return mu + np.exp(0.5 * logvar) * rng.standard_normal(mu.shape)


def _layer_names(n_hidden: int) -> list[str]:
    enc = [f"enc{i}" for i in range(n_hidden)]
    dec = [f"dec{i}" for i in range(n_hidden)]
    return enc + ["mu", "logvar"] + dec + ["out"]


class TrajectoryVAE(BaseEstimator):
    """Latent-variable model of planar stroke shape.

    Parameters
    ----------
    n_points : int
        Control points per trajectory; inputs flatten to 2 * n_points.
    hidden_sizes : tuple of int
        Encoder widths; the decoder mirrors them.
    latent_dim : int
        Size of the latent style vector.
    epochs, learning_rate, kl_weight : training hyperparameters.
        With ``kl_weight == 0`` the model degenerates to a plain
        autoencoder: no sampling noise is injected during training.
    warm_start : bool
        When True, ``fit`` continues from the current weights (fine-tuning)
        instead of reinitializing.
    seed : int
        Drives initialization and reparameterization noise; runs are
        bit-reproducible.
    """

    def __init__(self, n_points: int = 32, hidden_sizes: tuple = DEFAULT_HIDDEN,
                 latent_dim: int = DEFAULT_LATENT, epochs: int = 1500,
                 learning_rate: float = 1e-3, kl_weight: float = 1e-3,
                 warm_start: bool = False, seed: int = 0):
        self.n_points = n_points
        self.hidden_sizes = hidden_sizes
        self.latent_dim = latent_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.kl_weight = kl_weight
        self.warm_start = warm_start
        self.seed = seed

    # -- shape plumbing ----------------------------------------------------

    def _to_planar(self, X) -> np.ndarray:
        """Normalize input trajectories to a flat (m, 2 * n_points) array."""
        arrs = [np.asarray(t, dtype=np.float64) for t in X]
        flat = []
        for i, t in enumerate(arrs):
            if t.ndim != 2 or t.shape[0] != self.n_points or t.shape[1] not in (2, 3):
                raise ValueError(
                    f"trajectory {i}: expected ({self.n_points}, 2|3), got {t.shape}"
                )
            if not np.all(np.isfinite(t)):
                raise ValueError(f"trajectory {i}: non-finite values")
            flat.append(t[:, :2].reshape(-1))
        if not flat:
            raise ValueError("empty trajectory dataset")
        return np.stack(flat)

    def _init_weights(self, rng: np.random.Generator) -> dict[str, Tensor]:
        dims_in = 2 * self.n_points
        sizes_enc = [dims_in, *self.hidden_sizes]
        sizes_dec = [self.latent_dim, *reversed(self.hidden_sizes)]
        weights: dict[str, Tensor] = {}

        def dense(name: str, fan_in: int, fan_out: int) -> None:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights[f"{name}_w"] = Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)),
                                          requires_grad=True)
            weights[f"{name}_b"] = Tensor(np.zeros(fan_out), requires_grad=True)

        for i in range(len(self.hidden_sizes)):
            dense(f"enc{i}", sizes_enc[i], sizes_enc[i + 1])
        dense("mu", sizes_enc[-1], self.latent_dim)
        dense("logvar", sizes_enc[-1], self.latent_dim)
        for i in range(len(self.hidden_sizes)):
            dense(f"dec{i}", sizes_dec[i], sizes_dec[i + 1])
        dense("out", sizes_dec[-1], dims_in)
        return weights

    # -- tensor-path forward (shared by training and the planner) ----------

    def _encode_t(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = x
        for i in range(len(self.hidden_sizes)):
            h = ad.tanh(h @ self.weights_[f"enc{i}_w"] + self.weights_[f"enc{i}_b"])
        mu = h @ self.weights_["mu_w"] + self.weights_["mu_b"]
        logvar = h @ self.weights_["logvar_w"] + self.weights_["logvar_b"]
        return mu, logvar

    def _decode_t(self, z: Tensor) -> Tensor:
        h = z
        for i in range(len(self.hidden_sizes)):
            h = ad.tanh(h @ self.weights_[f"dec{i}_w"] + self.weights_[f"dec{i}_b"])
        return h @ self.weights_["out_w"] + self.weights_["out_b"]

    def decode_tensor(self, z: Tensor) -> Tensor:
        """Differentiable decode of a single latent (1, latent_dim) -> (n, 2)."""
        self._require_fitted()
        return ad.reshape(self._decode_t(z), (self.n_points, 2))

    # -- training -----------------------------------------------------------

    def fit(self, X, y=None) -> "TrajectoryVAE":
        check_positive_int(self.n_points, "n_points", minimum=2)
        check_positive_int(self.latent_dim, "latent_dim")
        check_positive_int(self.epochs, "epochs", minimum=0)
        if self.kl_weight < 0:
            raise ValueError(f"kl_weight must be nonnegative, got {self.kl_weight}")
        data = self._to_planar(X)
        rng = np.random.default_rng(self.seed)
        if not (self.warm_start and hasattr(self, "weights_")):
            self.weights_ = self._init_weights(rng)
            self.history_ = []

        params = list(self.weights_.values())
        opt = Adam(params, lr=self.learning_rate)
        x_const = Tensor(data)
        m = data.shape[0]

        best_loss = np.inf
        best = {k: v.data.copy() for k, v in self.weights_.items()}
        for _ in range(self.epochs):
            opt.zero_grad()
            with Tape():
                mu, logvar = self._encode_t(x_const)
                if self.kl_weight > 0:
                    eps = Tensor(rng.standard_normal((m, self.latent_dim)))
                    z = mu + ad.exp(0.5 * logvar) * eps
                else:
                    z = mu
                recon = self._decode_t(z)
                loss = ad.mean((recon - x_const) ** 2)
                if self.kl_weight > 0:
                    kl = ad.mean(-0.5 * ad.sum(1.0 + logvar - mu * mu - ad.exp(logvar), axis=1))
                    loss = loss + self.kl_weight * kl
                value = float(loss.data)
                backward(loss)
            opt.step()
            self.history_.append(value)
            if value < best_loss:
                best_loss = value
                best = {k: v.data.copy() for k, v in self.weights_.items()}
        for k in self.weights_:
            self.weights_[k] = Tensor(best[k], requires_grad=True)
        return self

    def finetune(self, X, epochs: int | None = None) -> "TrajectoryVAE":
        """Continue training on a new dataset from the current weights."""
        self._require_fitted()
        saved_epochs, saved_warm = self.epochs, self.warm_start
        if epochs is not None:
            self.epochs = epochs
        self.warm_start = True
        try:
            return self.fit(X)
        finally:
            self.epochs, self.warm_start = saved_epochs, saved_warm

    def _require_fitted(self) -> None:
        if not hasattr(self, "weights_"):
            raise RuntimeError("model is not fitted; call fit or load first")

    # -- inference ----------------------------------------------------------

    def encode(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior parameters (mu, logvar), each (m, latent_dim)."""
        self._require_fitted()
        data = self._to_planar(X)
        with ad.no_grad():
            mu, logvar = self._encode_t(Tensor(data))
        return mu.data.copy(), logvar.data.copy()

    def transform(self, X) -> np.ndarray:
        return self.encode(X)[0]

    def decode(self, Z) -> np.ndarray:
        """Latents (m, latent_dim) to trajectories (m, n_points, 3), h zeroed."""
        self._require_fitted()
        z = np.asarray(Z, dtype=np.float64)
        if z.ndim == 1:
            z = z[None, :]
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(f"latents: expected (m, {self.latent_dim}), got {z.shape}")
        with ad.no_grad():
            flat = self._decode_t(Tensor(z)).data
        xy = flat.reshape(z.shape[0], self.n_points, 2)
        return np.concatenate([xy, np.zeros((z.shape[0], self.n_points, 1))], axis=2)

    def inverse_transform(self, Z) -> np.ndarray:
        return self.decode(Z)

    def reconstruct(self, X) -> np.ndarray:
        """Decode from the posterior mean; returns (m, n_points, 2)."""
        mu, _ = self.encode(X)
        return self.decode(mu)[:, :, :2]

    def score(self, X, y=None) -> float:
        """Negative mean per-point squared reconstruction distance."""
        data = self._to_planar(X).reshape(-1, self.n_points, 2)
        recon = self.reconstruct(X)
        return -float(np.mean(np.sum((recon - data) ** 2, axis=2)))

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        self._require_fitted()
        header = {
            "n_points": self.n_points,
            "hidden_sizes": list(self.hidden_sizes),
            "latent_dim": self.latent_dim,
        }
        save_tensors(path, self.weights_, header=header)

    @classmethod
    def load(cls, path, **kwargs) -> "TrajectoryVAE":
        tensors, header = load_tensors(path)
        for key in ("n_points", "hidden_sizes", "latent_dim"):
            if key not in header:
                raise ValueError(f"vae checkpoint {path}: header missing {key}")
        model = cls(n_points=int(header["n_points"]),
                    hidden_sizes=tuple(header["hidden_sizes"]),
                    latent_dim=int(header["latent_dim"]), **kwargs)
        expected = {f"{n}_{s}" for n in _layer_names(len(model.hidden_sizes)) for s in ("w", "b")}
        if set(tensors) != expected:
            raise ValueError(f"vae checkpoint {path}: tensor names do not match architecture")
        model.weights_ = {k: Tensor(v, requires_grad=True) for k, v in tensors.items()}
        model.history_ = []
        return model
