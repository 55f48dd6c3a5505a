"""Neural transmission-rate function and the incidence ``F = f(S, I; n, beta, kappa) S I``.

:class:`IncidenceNet` is a scikit-learn style regressor: ``fit`` learns the
rate ``f`` from samples ``X = (s, i, n, beta, kappa)``; ``predict`` returns
``f``; :meth:`IncidenceNet.incidence` and :meth:`IncidenceNet.partials`
return ``F`` and its exact input derivatives.
"""
import json
import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _kernels

__all__ = ["INPUT_NAMES", "IncidenceNet", "orthogonal_init", "load_model"]

log = logging.getLogger(__name__)

INPUT_NAMES = ("s", "i", "n", "beta", "kappa")
FORMAT_NAME = "epicontrol.incidence-net"
FORMAT_VERSION = 1


def orthogonal_init(rng, n_in, n_out, gain=1.0):
    """Orthogonal matrix of shape ``(n_in, n_out)`` (QR of a Gaussian draw)."""
    rows, cols = max(n_in, n_out), min(n_in, n_out)
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def _relu(x):
    return np.maximum(x, 0.0)


def _to_hex(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes().hex()


def _from_hex(text, shape):
    return np.frombuffer(bytes.fromhex(text), dtype="<f8").reshape(shape).copy()


class IncidenceNet(RegressorMixin, BaseEstimator):
    """Multilayer perceptron for the transmission rate ``f``.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Widths of the ReLU hidden layers; the output layer is linear.
    learning_rate_init : float
        Initial Adam step size.
    lr_decay : float
        Factor applied to the step size after every epoch.
    batch_size, epochs : int
    validation_fraction : float
        Share of the shuffled samples held out to track validation loss.
    beta_1, beta_2, adam_epsilon : float
        Adam moment constants.
    warm_start : bool
        Continue from the current weights (and keep the input
        normalization) when ``fit`` is called again.
    random_state : int
    """

    def __init__(self, hidden_layer_sizes=(64, 128, 64, 16), learning_rate_init=1e-3,
                 lr_decay=0.9, batch_size=512, epochs=15, validation_fraction=0.15,
                 beta_1=0.9, beta_2=0.999, adam_epsilon=1e-7, warm_start=False,
                 random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate_init = learning_rate_init
        self.lr_decay = lr_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.validation_fraction = validation_fraction
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.adam_epsilon = adam_epsilon
        self.warm_start = warm_start
        self.random_state = random_state

    # -- construction helpers ---------------------------------------------

    @property
    def layer_sizes_(self):
        return [5, *self.hidden_layer_sizes, 1]

    def _init_params(self, rng):
        sizes = self.layer_sizes_
        self.coefs_ = [orthogonal_init(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        self.intercepts_ = [np.zeros(b) for b in sizes[1:]]

    @classmethod
    def from_closure(cls, rate=0.0, beta_coef=0.0, hidden_layer_sizes=(64, 128, 64, 16)):
        """Exact network for ``f = rate + beta_coef * beta`` (``beta >= 0``).

        Gives the zero network, constant closures and classical
        mass-action SIR (``beta_coef = 1``) inside the same code path.
        """
        net = cls(hidden_layer_sizes=hidden_layer_sizes)
        sizes = net.layer_sizes_
        net.coefs_ = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        net.intercepts_ = [np.zeros(b) for b in sizes[1:]]
        net.input_mean_ = np.zeros(5)
        net.input_scale_ = np.ones(5)
        if beta_coef != 0.0:
            net.coefs_[0][3, 0] = 1.0  # relu(beta) == beta on beta >= 0
            for W in net.coefs_[1:-1]:
                W[0, 0] = 1.0
            net.coefs_[-1][0, 0] = beta_coef
        net.intercepts_[-1][0] = rate
        net.loss_curve_ = []
        net.validation_loss_curve_ = []
        net.n_features_in_ = 5
        return net

    # -- inference -------------------------------------------------------

    def _forward(self, Z, keep=False):
        acts = [Z]
        h = Z
        for W, b in zip(self.coefs_[:-1], self.intercepts_[:-1]):
            h = _relu(h @ W + b)
            acts.append(h)
        out = h @ self.coefs_[-1] + self.intercepts_[-1]
        return (out[:, 0], acts) if keep else out[:, 0]

    def normalize(self, X):
        return (X - self.input_mean_) / self.input_scale_

    def denormalize(self, Z):
        return Z * self.input_scale_ + self.input_mean_

    def predict(self, X):
        """Transmission rate ``f`` for rows ``(s, i, n, beta, kappa)``."""
        check_is_fitted(self, "coefs_")
        X = check_array(X, dtype=np.float64)
        return self._forward(self.normalize(X))

    def incidence(self, X):
        X = check_array(X, dtype=np.float64)
        return self.predict(X) * X[:, 0] * X[:, 1]

    def forward(self, s, i, n, beta, kappa):
        """``(f, F)`` at broadcast scalar or array inputs."""
        X = np.column_stack(np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, dtype=float))
                                                   for a in (s, i, n, beta, kappa))))
        f = self.predict(X)
        F = f * X[:, 0] * X[:, 1]
        if np.ndim(s) == 0 and all(np.ndim(a) == 0 for a in (i, n, beta, kappa)):
            return float(f[0]), float(F[0])
        return f, F

    def input_gradient(self, X):
        """``(f, df/dX)`` by reverse mode through the network, raw-input scale."""
        check_is_fitted(self, "coefs_")
        X = check_array(X, dtype=np.float64)
        f, acts = self._forward(self.normalize(X), keep=True)
        g = np.broadcast_to(self.coefs_[-1][:, 0], (X.shape[0], self.coefs_[-1].shape[0])).copy()
        for layer in range(len(self.coefs_) - 2, -1, -1):
            g = g * (acts[layer + 1] > 0)
            g = g @ self.coefs_[layer].T
        return f, g / self.input_scale_

    def partials(self, X):
        """``(dF/dS, dF/dI, dF/dbeta, dF/dkappa)`` as an ``(n_samples, 4)`` array."""
        X = check_array(X, dtype=np.float64)
        f, g = self.input_gradient(X)
        s, i = X[:, 0], X[:, 1]
        si = s * i
        return np.column_stack([g[:, 0] * si + f * i, g[:, 1] * si + f * s,
                                g[:, 3] * si, g[:, 4] * si])

    def kernel_params(self):
        """Flat parameters for the compiled integrators (cached per fit)."""
        check_is_fitted(self, "coefs_")
        cached = getattr(self, "_kernel_cache", None)
        if cached is not None and cached[0] is self.coefs_[0]:
            return cached[1]
        flat = np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.coefs_, self.intercepts_)])
        params = (np.ascontiguousarray(flat), np.array(self.layer_sizes_, dtype=np.int64),
                  np.ascontiguousarray(self.input_mean_, dtype=float),
                  np.ascontiguousarray(self.input_scale_, dtype=float))
        self._kernel_cache = (self.coefs_[0], params)
        return params

    def point_partials(self, s, i, n, beta, kappa):
        """Scalar version of :meth:`partials` through the compiled kernel."""
        out = np.empty(4)
        F = _kernels.incidence_partials(float(s), float(i), float(n), float(beta), float(kappa),
                                        *self.kernel_params(), out)
        return F, out

    # -- training --------------------------------------------------------

    def _check_hyperparameters(self):
        for name in ("learning_rate_init", "batch_size", "epochs", "beta_1", "beta_2", "adam_epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")

    def fit(self, X, y):
        self._check_hyperparameters()
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("need at least two samples to train")
        if X.shape[1] != 5:
            raise ValueError("expected 5 input columns (s, i, n, beta, kappa)")
        rng = np.random.default_rng(self.random_state)
        order = rng.permutation(X.shape[0])
        n_val = max(1, int(round(self.validation_fraction * X.shape[0])))
        n_val = min(n_val, X.shape[0] - 1)
        train_idx, val_idx = order[:-n_val], order[-n_val:]

        continuing = self.warm_start and hasattr(self, "coefs_")
        if not continuing:
            self.input_mean_ = X[train_idx].mean(axis=0)
            scale = X[train_idx].std(axis=0)
            self.input_scale_ = np.where(scale > 0, scale, 1.0)
            self._init_params(rng)
            self.loss_curve_ = []
            self.validation_loss_curve_ = []
        self.n_features_in_ = 5
        self._kernel_cache = None

        Ztr, ytr = self.normalize(X[train_idx]), y[train_idx]
        Zval, yval = self.normalize(X[val_idx]), y[val_idx]
        params = self.coefs_ + self.intercepts_
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        step = 0
        n_layers = len(self.coefs_)
        for epoch in range(self.epochs):
            lr = self.learning_rate_init * self.lr_decay ** epoch
            perm = rng.permutation(Ztr.shape[0])
            total = 0.0
            for start in range(0, perm.size, self.batch_size):
                batch = perm[start:start + self.batch_size]
                pred, acts = self._forward(Ztr[batch], keep=True)
                err = pred - ytr[batch]
                total += float(err @ err)
                grad_out = (2.0 / batch.size) * err[:, None]
                grads_W = [None] * n_layers
                grads_b = [None] * n_layers
                g = grad_out
                for layer in range(n_layers - 1, -1, -1):
                    grads_W[layer] = acts[layer].T @ g
                    grads_b[layer] = g.sum(axis=0)
                    if layer:
                        g = (g @ self.coefs_[layer].T) * (acts[layer] > 0)
                step += 1
                corr1 = 1.0 - self.beta_1 ** step
                corr2 = 1.0 - self.beta_2 ** step
                for idx, (p, gr) in enumerate(zip(params, grads_W + grads_b)):
                    m[idx] *= self.beta_1
                    m[idx] += (1.0 - self.beta_1) * gr
                    v[idx] *= self.beta_2
                    v[idx] += (1.0 - self.beta_2) * gr * gr
                    p -= lr * (m[idx] / corr1) / (np.sqrt(v[idx] / corr2) + self.adam_epsilon)
            train_loss = total / Ztr.shape[0]
            val_err = self._forward(Zval) - yval
            val_loss = float(val_err @ val_err) / yval.size
            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}: train={train_loss}, validation={val_loss}; "
                    f"target range [{y.min()}, {y.max()}]")
            self.loss_curve_.append(train_loss)
            self.validation_loss_curve_.append(val_loss)
            log.debug("epoch %d lr=%.3g train=%.6g val=%.6g", epoch, lr, train_loss, val_loss)
        return self

    # -- persistence -----------------------------------------------------

    def to_dict(self):
        check_is_fitted(self, "coefs_")
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "layer_sizes": self.layer_sizes_,
            "hidden_activation": "relu",
            "output_activation": "identity",
            "inputs": list(INPUT_NAMES),
            "hyperparameters": {k: (list(v) if isinstance(v, tuple) else v)
                                for k, v in sorted(self.get_params().items())},
            "input_mean": _to_hex(self.input_mean_),
            "input_scale": _to_hex(self.input_scale_),
            "weights": [_to_hex(W) for W in self.coefs_],
            "biases": [_to_hex(b) for b in self.intercepts_],
            "loss_curve": list(self.loss_curve_),
            "validation_loss_curve": list(self.validation_loss_curve_),
        }

    def save(self, path):
        with open(path, "w", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != FORMAT_NAME:
            raise ValueError(f"not an incidence-net file (format={data.get('format')!r})")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported incidence-net version {data.get('version')!r}")
        hyper = dict(data["hyperparameters"])
        hyper["hidden_layer_sizes"] = tuple(hyper["hidden_layer_sizes"])
        net = cls(**hyper)
        sizes = data["layer_sizes"]
        if list(net.layer_sizes_) != list(sizes):
            raise ValueError("layer sizes disagree with hyperparameters")
        net.coefs_ = [_from_hex(w, (a, b)) for w, a, b in zip(data["weights"], sizes[:-1], sizes[1:])]
        net.intercepts_ = [_from_hex(bias, (b,)) for bias, b in zip(data["biases"], sizes[1:])]
        net.input_mean_ = _from_hex(data["input_mean"], (5,))
        net.input_scale_ = _from_hex(data["input_scale"], (5,))
        net.loss_curve_ = list(data.get("loss_curve", []))
        net.validation_loss_curve_ = list(data.get("validation_loss_curve", []))
        net.n_features_in_ = 5
        return net


def load_model(path):
    with open(path) as fh:
        return IncidenceNet.from_dict(json.load(fh))
