"""Loss models with exact analytic gradients.

Parameters live in a single flat numpy vector ``w``; the bias is handled by
appending a constant-1 feature internally, so the training loop never needs to
know about model structure. Three variants:

* ``LinearRegressionMSE`` -- squared error ``(x~ @ w - y)**2`` (no 1/2 factor), convex.
* ``LogisticRegression``  -- binary cross-entropy on labels in {0, 1}, convex.
* ``TinyMLP``             -- one tanh hidden layer with an MSE head, non-convex.

Gradients are hand-derived (vectorized backprop for the MLP); there is no
autodiff dependency, and tests cross-check every variant against central
finite differences.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    return arr


def _check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")


def append_bias(X: np.ndarray) -> np.ndarray:
    """Append a constant-1 column so the bias is an ordinary weight."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.hstack([X, np.ones((X.shape[0], 1))])


class LossModel:
    """Base class: per-sample and batch loss/gradient oracles.

    Subclasses set ``input_dim``, ``param_dim``, ``convex`` and implement the
    vectorized ``_loss_vec`` / ``_per_sample_grads`` primitives; everything
    else derives from those.
    """

    kind = "base"
    convex = False

    def __init__(self, input_dim: int):
        if input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {input_dim}")
        self.input_dim = int(input_dim)

    # -- subclass hooks -------------------------------------------------
    def _loss_vec(self, w: np.ndarray, Xb: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _per_sample_grads(self, w: np.ndarray, Xb: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- validation -----------------------------------------------------
    def _check_w(self, w) -> np.ndarray:
        w = _as_vector(w, "w")
        if w.shape[0] != self.param_dim:
            raise ValueError(
                f"parameter vector has dim {w.shape[0]}, model expects {self.param_dim}"
            )
        _check_finite(w, "w")
        return w

    def _check_batch(self, X, y) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if X.shape[0] == 0:
            raise ValueError("empty batch")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
        if X.shape[1] != self.input_dim:
            raise ValueError(
                f"features have dim {X.shape[1]}, model expects {self.input_dim}"
            )
        _check_finite(X, "features")
        _check_finite(y, "targets")
        return X, y

    # -- public API -----------------------------------------------------
    def loss(self, w, features, target) -> float:
        """Loss of one sample."""
        w = self._check_w(w)
        X, y = self._check_batch(np.atleast_2d(features), [target])
        return float(self._loss_vec(w, append_bias(X), y)[0])

    def grad(self, w, features, target) -> np.ndarray:
        """Exact gradient of ``loss`` with respect to ``w`` for one sample."""
        w = self._check_w(w)
        X, y = self._check_batch(np.atleast_2d(features), [target])
        return self._per_sample_grads(w, append_bias(X), y)[0]

    def loss_batch(self, w, X, y) -> float:
        """Mean loss over a batch (the empirical risk when X is the full set)."""
        w = self._check_w(w)
        X, y = self._check_batch(X, y)
        return float(np.mean(self._loss_vec(w, append_bias(X), y)))

    def grad_batch(self, w, X, y) -> np.ndarray:
        """Arithmetic mean of the per-sample gradients."""
        w = self._check_w(w)
        X, y = self._check_batch(X, y)
        return self._per_sample_grads(w, append_bias(X), y).mean(axis=0)

    def per_sample_grads(self, w, X, y) -> np.ndarray:
        """All per-sample gradients as an (n, param_dim) matrix."""
        w = self._check_w(w)
        X, y = self._check_batch(X, y)
        return self._per_sample_grads(w, append_bias(X), y)

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(0.0, 0.5, self.param_dim)

    def __repr__(self):
        return f"{type(self).__name__}(input_dim={self.input_dim})"


class LinearRegressionMSE(LossModel):
    """Least-squares regression, loss (x~ @ w - y)**2."""

    kind = "linear_regression"
    convex = True

    def __init__(self, input_dim: int):
        super().__init__(input_dim)
        self.param_dim = self.input_dim + 1

    def _loss_vec(self, w, Xb, y):
        r = Xb @ w - y
        return r * r

    def _per_sample_grads(self, w, Xb, y):
        r = Xb @ w - y
        return 2.0 * r[:, None] * Xb

    def grad_batch(self, w, X, y) -> np.ndarray:
        w = self._check_w(w)
        X, y = self._check_batch(X, y)
        Xb = append_bias(X)
        r = Xb @ w - y
        return (2.0 / Xb.shape[0]) * (Xb.T @ r)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LogisticRegression(LossModel):
    """Binary cross-entropy on labels in {0, 1}."""

    kind = "logistic_regression"
    convex = True

    def __init__(self, input_dim: int):
        super().__init__(input_dim)
        self.param_dim = self.input_dim + 1

    def _check_batch(self, X, y):
        X, y = super()._check_batch(X, y)
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("logistic regression targets must be 0 or 1")
        return X, y

    def _loss_vec(self, w, Xb, y):
        z = Xb @ w
        # softplus(z) - y*z == -y*log(p) - (1-y)*log(1-p)
        return np.logaddexp(0.0, z) - y * z

    def _per_sample_grads(self, w, Xb, y):
        p = _sigmoid(Xb @ w)
        return (p - y)[:, None] * Xb

    def predict(self, w, X) -> np.ndarray:
        """Hard 0/1 predictions (decision threshold at probability 1/2)."""
        w = self._check_w(w)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return (append_bias(X) @ w >= 0.0).astype(np.float64)


class TinyMLP(LossModel):
    """One tanh hidden layer, MSE head; the non-convex test model.

    tanh keeps the loss smooth everywhere, so a finite smoothness constant
    exists on any bounded region (ReLU would not give that).

    Parameter layout: W1 of shape (input_dim+1, hidden) flattened C-order,
    then the output weights w2 of length hidden+1 (last entry is the output
    bias), so param_dim = (input_dim+1)*hidden + hidden + 1.
    """

    kind = "tiny_mlp"
    convex = False

    def __init__(self, input_dim: int, hidden_width: int = 8):
        super().__init__(input_dim)
        if hidden_width < 1:
            raise ValueError(f"hidden_width must be >= 1, got {hidden_width}")
        self.hidden_width = int(hidden_width)
        self.param_dim = (self.input_dim + 1) * self.hidden_width + self.hidden_width + 1

    def _split(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m = self.input_dim + 1
        h = self.hidden_width
        return w[: m * h].reshape(m, h), w[m * h :]

    def _forward(self, w, Xb):
        W1, w2 = self._split(w)
        A = np.tanh(Xb @ W1)
        yhat = A @ w2[:-1] + w2[-1]
        return A, w2, yhat

    def _loss_vec(self, w, Xb, y):
        _, _, yhat = self._forward(w, Xb)
        r = yhat - y
        return r * r

    def _per_sample_grads(self, w, Xb, y):
        A, w2, yhat = self._forward(w, Xb)
        r = 2.0 * (yhat - y)                     # (n,)
        dW2 = r[:, None] * A                     # (n, h)
        dZ = (r[:, None] * w2[None, :-1]) * (1.0 - A * A)
        dW1 = np.einsum("ni,nj->nij", Xb, dZ).reshape(Xb.shape[0], -1)
        return np.hstack([dW1, dW2, r[:, None]])

    def grad_batch(self, w, X, y) -> np.ndarray:
        w = self._check_w(w)
        X, y = self._check_batch(X, y)
        Xb = append_bias(X)
        A, w2, yhat = self._forward(w, Xb)
        n = Xb.shape[0]
        r = 2.0 * (yhat - y)
        dZ = (r[:, None] * w2[None, :-1]) * (1.0 - A * A)
        g = np.empty(self.param_dim)
        mh = (self.input_dim + 1) * self.hidden_width
        g[:mh] = (Xb.T @ dZ).ravel() / n
        g[mh:-1] = (A.T @ r) / n
        g[-1] = r.mean()
        return g

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        m = self.input_dim + 1
        h = self.hidden_width
        W1 = rng.normal(0.0, 1.0 / np.sqrt(m), (m, h))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(h + 1), h + 1)
        return np.concatenate([W1.ravel(), w2])

    def __repr__(self):
        return f"TinyMLP(input_dim={self.input_dim}, hidden_width={self.hidden_width})"


_MODEL_KINDS = {
    "linear_regression": LinearRegressionMSE,
    "logistic_regression": LogisticRegression,
    "tiny_mlp": TinyMLP,
}


def make_model(kind: str, input_dim: int, hidden_width: int = 8) -> LossModel:
    """Factory used by config files."""
    if kind not in _MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(_MODEL_KINDS)}")
    if kind == "tiny_mlp":
        return TinyMLP(input_dim, hidden_width)
    return _MODEL_KINDS[kind](input_dim)
