"""Exact GP regression with an isotropic squared-exponential kernel."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lapack, solve_triangular
from scipy.optimize import minimize

JITTER = 1e-8
MAX_JITTER = 1e-4

# log-space hyperparameter bounds: length-scale, signal variance, noise variance
_BOUNDS = [(np.log(1e-3), np.log(5.0)), (np.log(1e-2), np.log(20.0)), (np.log(1e-6), np.log(1e-1))]


class IllConditioned(np.linalg.LinAlgError):
    pass


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _chol(K: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with jitter escalation up to ``MAX_JITTER``."""
    jitter = JITTER
    eye = np.eye(K.shape[0])
    while jitter <= MAX_JITTER * (1 + 1e-12):
        try:
            return np.linalg.cholesky(K + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise IllConditioned("covariance not positive definite even with jitter 1e-4")


class SurrogateModel:
    """GP on normalized inputs with standardized targets."""

    def __init__(self, lengthscale=0.2, signal_var=1.0, noise_var=1e-4):
        self.lengthscale = lengthscale
        self.signal_var = signal_var
        self.noise_var = max(noise_var, JITTER)
        self.X = None

    def kernel(self, a, b):
        return self.signal_var * np.exp(-0.5 * _sqdist(a, b) / self.lengthscale**2)

    @staticmethod
    def _nll(theta, D, y):
        """Negative log marginal likelihood and its gradient in log-parameters."""
        ls, sv, nv = np.exp(theta)
        E = np.exp(-0.5 * D / ls**2)
        K = sv * E + (nv + JITTER) * np.eye(len(y))
        try:
            c = cho_factor(K, lower=True)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros(3)
        alpha = cho_solve(c, y)
        val = 0.5 * y @ alpha + np.log(np.diag(c[0])).sum()
        Kinv, info = lapack.dpotri(c[0], lower=1)
        if info != 0:
            return 1e25, np.zeros(3)
        Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
        W = Kinv - np.outer(alpha, alpha)
        sE = sv * E
        grad = 0.5 * np.array([(W * sE * D).sum() / ls**2, (W * sE).sum(), nv * np.trace(W)])
        return val, grad

    def fit(self, X, y, rng: np.random.Generator | None = None, restarts: int = 3) -> "SurrogateModel":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if X.shape[0] < 2:
            raise ValueError("surrogate needs at least two training points")
        self.y_mean = float(y.mean())
        sd = float(y.std())
        self.y_std = sd if sd > 1e-12 else 1.0
        ys = (y - self.y_mean) / self.y_std
        rng = rng if rng is not None else np.random.default_rng(0)
        lo = np.array([b[0] for b in _BOUNDS])
        hi = np.array([b[1] for b in _BOUNDS])
        D = _sqdist(X, X)
        best = None
        for _ in range(restarts):
            theta0 = lo + rng.random(3) * (hi - lo)
            res = minimize(self._nll, theta0, args=(D, ys), method="L-BFGS-B", jac=True,
                           bounds=_BOUNDS, options={"maxiter": 50})
            if best is None or res.fun < best.fun:
                best = res
        self.lengthscale, self.signal_var, nv = np.exp(best.x)
        self.noise_var = max(nv, JITTER)
        self.X = X
        self._ys = ys
        K = self.kernel(X, X) + self.noise_var * np.eye(len(ys))
        self._L = _chol(K)
        self._alpha = cho_solve((self._L, True), ys)
        return self

    def posterior(self, Xc, full_cov: bool = True):
        """Posterior mean and covariance (standardized units)."""
        Xc = np.atleast_2d(np.asarray(Xc, dtype=float))
        Ks = self.kernel(Xc, self.X)
        mean = Ks @ self._alpha
        v = solve_triangular(self._L, Ks.T, lower=True)
        if full_cov:
            cov = self.kernel(Xc, Xc) - v.T @ v
        else:
            cov = self.signal_var - (v * v).sum(0)
        return mean, cov

    def predict(self, Xc) -> np.ndarray:
        mean, _ = self.posterior(Xc, full_cov=False)
        return self.y_mean + self.y_std * mean

    def sample(self, Xc, rng: np.random.Generator) -> np.ndarray:
        """One joint posterior draw over ``Xc`` (original units)."""
        mean, cov = self.posterior(Xc)
        L = _chol(0.5 * (cov + cov.T))
        z = rng.standard_normal(len(mean))
        return self.y_mean + self.y_std * (mean + L @ z)


def surrogate_thompson_select(model: SurrogateModel, candidates, n_select: int,
                              rng: np.random.Generator, maximize: bool = True) -> np.ndarray:
    """Best ``n_select`` candidates under a single joint posterior draw."""
    cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    if cand.shape[0] == 0:
        raise ValueError("no candidates to select from")
    if n_select >= cand.shape[0]:
        return cand.copy()
    f = model.sample(cand, rng)
    order = np.argsort(-f if maximize else f, kind="stable")
    return cand[order[:n_select]]
