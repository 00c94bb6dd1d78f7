"""Epsilon-insensitive support vector regression.

The dual is solved by sequential minimal optimization over the stacked
variables ``beta = [alpha, alpha_star]`` with the second-order working-set
rule. Kernel rows are evaluated on demand, so memory stays linear in the
number of training points.

Dual (minimisation form)::

    min  0.5 * beta' Q beta + p' beta
    s.t. s' beta = 0,  0 <= beta <= C

with ``s = [1]*n + [-1]*n``, ``Q[t, u] = s_t s_u K(x_t, x_u)`` and
``p = [eps - y, eps + y]``. The regression function is
``f(x) = sum_i (alpha_i - alpha_star_i) K(x_i, x) + intercept``.
"""

from __future__ import annotations

import numba
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

RBF = 0
LINEAR = 1
_KERNELS = {"rbf": RBF, "linear": LINEAR}
TAU = 1e-12
# Above this many points kernel rows are recomputed instead of cached.
CACHE_LIMIT = 3000


@numba.njit(cache=True)
def _kernel_row(X, i, kind, gamma, out):
    n, d = X.shape
    for j in range(n):
        acc = 0.0
        if kind == RBF:
            for k in range(d):
                diff = X[i, k] - X[j, k]
                acc += diff * diff
            out[j] = np.exp(-gamma * acc)
        else:
            for k in range(d):
                acc += X[i, k] * X[j, k]
            out[j] = acc


@numba.njit(cache=True)
def _smo(X, K, y, C, eps, kind, gamma, tol, max_iter, beta0):
    n = X.shape[0]
    m2 = 2 * n
    beta = beta0.copy()
    G = np.empty(m2)
    sign = np.empty(m2)
    diag = np.empty(n)
    for t in range(n):
        G[t] = eps - y[t]
        G[t + n] = eps + y[t]
        sign[t] = 1.0
        sign[t + n] = -1.0
        if kind == RBF:
            diag[t] = 1.0
        else:
            acc = 0.0
            for k in range(X.shape[1]):
                acc += X[t, k] * X[t, k]
            diag[t] = acc
    cached = K.shape[0] == n
    Ki = np.empty(n)
    Kj = np.empty(n)
    # Warm start: G = Q beta + p.
    for t in range(n):
        c = beta[t] - beta[t + n]
        if c != 0.0:
            if cached:
                Ki = K[t]
            else:
                _kernel_row(X, t, kind, gamma, Ki)
            for u in range(n):
                G[u] += Ki[u] * c
                G[u + n] -= Ki[u] * c
    it = 0
    gap = np.inf
    while it < max_iter:
        # i: maximal violator in I_up
        gmax = -np.inf
        i = -1
        for t in range(m2):
            if sign[t] > 0:
                if beta[t] < C and -G[t] > gmax:
                    gmax = -G[t]
                    i = t
            else:
                if beta[t] > 0 and G[t] > gmax:
                    gmax = G[t]
                    i = t
        if i < 0:
            gap = 0.0
            break
        ii = i % n
        if cached:
            Ki = K[ii]
        else:
            _kernel_row(X, ii, kind, gamma, Ki)
        gmax2 = -np.inf
        j = -1
        best = np.inf
        for t in range(m2):
            tt = t % n
            if sign[t] > 0:
                if beta[t] > 0:
                    gd = gmax + G[t]
                    if G[t] > gmax2:
                        gmax2 = G[t]
                    if gd > 0:
                        quad = diag[ii] + diag[tt] - 2.0 * Ki[tt]
                        if quad <= 0:
                            quad = TAU
                        od = -(gd * gd) / quad
                        if od < best:
                            best = od
                            j = t
            else:
                if beta[t] < C:
                    gd = gmax - G[t]
                    if -G[t] > gmax2:
                        gmax2 = -G[t]
                    if gd > 0:
                        quad = diag[ii] + diag[tt] - 2.0 * Ki[tt]
                        if quad <= 0:
                            quad = TAU
                        od = -(gd * gd) / quad
                        if od < best:
                            best = od
                            j = t
        gap = gmax + gmax2
        if gap < tol or j < 0:
            break
        jj = j % n
        if cached:
            Kj = K[jj]
        else:
            _kernel_row(X, jj, kind, gamma, Kj)
        # Q[i, j] = s_i s_j K
        qij = sign[i] * sign[j] * Ki[jj]
        old_i = beta[i]
        old_j = beta[j]
        if sign[i] != sign[j]:
            quad = diag[ii] + diag[jj] + 2.0 * qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = beta[i] - beta[j]
            beta[i] += delta
            beta[j] += delta
            if diff > 0:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = diff
            else:
                if beta[i] < 0:
                    beta[i] = 0.0
                    beta[j] = -diff
            if diff > 0:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = C - diff
            else:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = C + diff
        else:
            quad = diag[ii] + diag[jj] - 2.0 * qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            total = beta[i] + beta[j]
            beta[i] -= delta
            beta[j] += delta
            if total > C:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = total - C
            else:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = total
            if total > C:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = total - C
            else:
                if beta[i] < 0:
                    beta[i] = 0.0
                    beta[j] = total
        di = beta[i] - old_i
        dj = beta[j] - old_j
        si = sign[i]
        sj = sign[j]
        for t in range(m2):
            tt = t % n
            G[t] += sign[t] * (si * Ki[tt] * di + sj * Kj[tt] * dj)
        it += 1
    return beta, G, it, gap


def kernel_matrix(A, B, kernel="rbf", gamma=1.0):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if kernel == "linear":
        return A @ B.T
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def dual_objective(beta, K, y, eps):
    """Value of the minimisation-form dual at ``beta``."""
    n = len(y)
    coef = beta[:n] - beta[n:]
    return 0.5 * coef @ K @ coef + eps * beta.sum() - y @ coef


def _rho(beta, G, C):
    n2 = beta.size
    sign = np.r_[np.ones(n2 // 2), -np.ones(n2 // 2)]
    yG = sign * G
    at_upper = beta >= C
    at_lower = beta <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        return yG[free].mean()
    ub_mask = (at_upper & (sign < 0)) | (at_lower & (sign > 0))
    lb_mask = (at_upper & (sign > 0)) | (at_lower & (sign < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    if not np.isfinite(ub):
        return lb
    if not np.isfinite(lb):
        return ub
    return 0.5 * (ub + lb)


def _violations(beta, G, C, rho):
    """Per-variable KKT violation against the threshold ``rho``."""
    n2 = beta.size
    sign = np.r_[np.ones(n2 // 2), -np.ones(n2 // 2)]
    v = -sign * G
    up = ((sign > 0) & (beta < C)) | ((sign < 0) & (beta > 0))
    low = ((sign > 0) & (beta > 0)) | ((sign < 0) & (beta < C))
    res = np.zeros(n2)
    res[up] = np.maximum(res[up], v[up] + rho)
    res[low] = np.maximum(res[low], -rho - v[low])
    return res


class EpsilonSVR(RegressorMixin, BaseEstimator):
    """Epsilon-insensitive support vector regressor.

    Parameters
    ----------
    C : float
        Box constraint on each dual coefficient.
    epsilon : float
        Half-width of the insensitive tube, in target units.
    kernel : {"rbf", "linear"}
    gamma : float or None
        RBF width. ``None`` uses ``1 / n_features``.
    tol : float
        Stop once the maximal KKT violation drops below ``tol``.
    max_passes : int
        Cap on solver work, counted in sweeps of ``n_samples`` pair updates.
    refine_below : int
        Problems with at most this many points are driven on to
        ``refine_tol`` after reaching ``tol``, pinning the optimum to
        near machine precision where that is cheap.
    refine_tol : float

    Attributes
    ----------
    dual_coef_ : ndarray
        ``alpha - alpha_star`` for each support vector.
    support_vectors_ : ndarray
    intercept_ : float
    objective_ : float
        Dual objective at termination (minimisation form).
    kkt_gap_ : float
        Maximal pairwise KKT violation at termination.
    """

    def __init__(self, C=1.0, epsilon=0.1, kernel="rbf", gamma=None, tol=1e-3,
                 max_passes=10_000, refine_below=400, refine_tol=1e-10):
        self.C = C
        self.epsilon = epsilon
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol
        self.max_passes = max_passes
        self.refine_below = refine_below
        self.refine_tol = refine_tol

    def _gamma(self, n_features):
        if self.kernel == "linear":
            return 0.0
        return float(self.gamma) if self.gamma is not None else 1.0 / max(n_features, 1)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.kernel not in _KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        n = X.shape[0]
        if n < 2:
            raise ValueError("SVR needs at least two training points")
        self.n_features_in_ = X.shape[1]
        self.gamma_ = self._gamma(X.shape[1])
        C, eps = float(self.C), float(self.epsilon)
        X = np.ascontiguousarray(X)
        max_iter = int(self.max_passes) * n
        K = kernel_matrix(X, X, self.kernel, self.gamma_) if n <= CACHE_LIMIT else np.empty((0, 0))
        y = np.ascontiguousarray(y)
        kind = _KERNELS[self.kernel]
        beta, G, n_iter, gap = _smo(X, K, y, C, eps, kind, self.gamma_, float(self.tol),
                                    max_iter, np.zeros(2 * n))
        if n <= self.refine_below and self.refine_tol < self.tol:
            beta, G, extra, gap = _smo(X, K, y, C, eps, kind, self.gamma_, float(self.refine_tol),
                                       max_iter, beta)
            n_iter += extra
        rho = _rho(beta, G, C)
        viol = _violations(beta, G, C, rho)
        coef = beta[:n] - beta[n:]
        sv = coef != 0
        self.n_iter_ = int(n_iter)
        self.beta_ = beta
        self.support_ = np.flatnonzero(sv)
        self.support_vectors_ = X[sv].copy()
        self.dual_coef_ = coef[sv]
        self.intercept_ = float(-rho)
        self.kkt_residuals_ = np.maximum(viol[:n], viol[n:])
        self.kkt_gap_ = float(viol.max()) if viol.size else 0.0
        # K @ coef is recoverable from the gradient.
        self.objective_ = float(0.5 * coef @ (G[:n] - eps + y) + eps * beta.sum() - y @ coef)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "dual_coef_")
        X = check_array(X, dtype=float)
        if self.support_vectors_.shape[0] == 0:
            return np.full(X.shape[0], self.intercept_)
        K = kernel_matrix(X, self.support_vectors_, self.kernel, self.gamma_)
        return K @ self.dual_coef_ + self.intercept_

    def predict(self, X):
        return self.decision_function(X)
