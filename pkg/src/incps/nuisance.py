"""Nuisance-function learners behind a uniform fit/predict interface.

Probability models estimate treatment propensities; regression models
estimate outcome and pseudo-outcome regressions. Four kinds are built in
(logistic, linear, boosted-stumps, knn), all implemented on numpy with
deterministic fits. Oracle pass-through learners (used by simulation
tests) satisfy the same duck-typed contract: ``fit(features, targets)``
returns a model with ``predict``.

Probability predictions are clipped to [eps_clip, 1 - eps_clip] only when
the caller asks. Incremental-effect estimators never clip: their weight
denominator delta*pi + 1 - pi is bounded below by min(1, delta). Clipping
is for ATE/MSM weight denominators, which do divide by probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FoldAssignment, stack_records

LEARNER_KINDS = ("logistic", "linear", "boosted-stumps", "knn")

_NEWTON_TOL = 1e-8
_NEWTON_MAX_ITER = 100
_LEAF_RIDGE = 1e-6  # stabilizes Newton leaf values in boosted stumps


@dataclass(frozen=True)
class LearnerSpec:
    """Learner kind plus hyperparameters.

    Parameters
    ----------
    kind : str
        One of ``logistic``, ``linear``, ``boosted-stumps``, ``knn``.
    learning_rate, rounds : boosted-stumps shrinkage and round count.
    k : neighbor count for knn.
    ridge : L2 penalty for the linear kind (intercept unpenalized).
    eps_clip : probability clipping bound, used only on request.
    """

    kind: str
    learning_rate: float = 0.1
    rounds: int = 200
    k: int = 25
    ridge: float = 1e-8
    eps_clip: float = 0.01

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}, want one of {LEARNER_KINDS}")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if not 0 < self.eps_clip < 0.5:
            raise ValueError("eps_clip must be in (0, 0.5)")


def expit(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def clip_probabilities(p, eps):
    """Clip to [eps, 1-eps]; returns (clipped, number of changed entries)."""
    p = np.asarray(p, dtype=float)
    clipped = np.clip(p, eps, 1.0 - eps)
    return clipped, int(np.count_nonzero(clipped != p))


def _check_xy(features, targets):
    X = np.asarray(features, dtype=float)
    t = np.asarray(targets, dtype=float)
    if X.ndim != 2:
        raise ValueError("features must be a 2-d matrix")
    if len(X) != len(t):
        raise ValueError(f"features rows ({len(X)}) != targets length ({len(t)})")
    if len(X) < 2:
        raise ValueError("need at least 2 rows to fit")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(t)):
        raise ValueError("features and targets must be finite")
    return X, t


class _ConstantModel:
    def __init__(self, value):
        self.value = float(value)

    def raw(self, X):
        return np.full(len(X), self.value)


class _LogisticModel:
    """Maximum-likelihood logistic fit via damped Newton iterations."""

    def __init__(self, X, y):
        n, d = X.shape
        Xd = np.column_stack([np.ones(n), X])
        beta = np.zeros(d + 1)

        def loss(b):
            eta = Xd @ b
            return float(np.mean(np.logaddexp(0.0, eta) - y * eta))

        current = loss(beta)
        for _ in range(_NEWTON_MAX_ITER):
            p = expit(Xd @ beta)
            grad = Xd.T @ (p - y) / n
            if np.linalg.norm(grad) <= _NEWTON_TOL:
                break
            w = p * (1.0 - p) + 1e-12
            hess = (Xd * w[:, None]).T @ Xd / n
            hess[np.diag_indices_from(hess)] += 1e-12
            step = np.linalg.solve(hess, grad)
            scale = 1.0
            while scale > 1e-10:
                cand = beta - scale * step
                cand_loss = loss(cand)
                if cand_loss <= current:
                    break
                scale /= 2.0
            beta = beta - scale * step
            current = loss(beta)
        self.coef = beta

    def raw(self, X):
        return expit(self.coef[0] + X @ self.coef[1:])


class _RidgeModel:
    """Least squares with an L2 penalty on the slopes only."""

    def __init__(self, X, y, ridge):
        n, d = X.shape
        Xd = np.column_stack([np.ones(n), X])
        gram = Xd.T @ Xd
        pen = np.diag([0.0] + [ridge] * d)
        self.coef = np.linalg.solve(gram + pen, Xd.T @ y)

    def raw(self, X):
        return self.coef[0] + X @ self.coef[1:]


class _StumpEnsembleModel:
    """Gradient-boosted depth-1 trees.

    Squared-error boosting for regression targets; Newton boosting on the
    log-loss (logit scale) for binary targets. Split search scans sorted
    feature prefixes, so every round costs O(d n); ties break at the first
    candidate for determinism.
    """

    def __init__(self, X, y, spec, logistic):
        n, d = X.shape
        self.logistic = logistic
        self.lr = spec.learning_rate
        order = [np.argsort(X[:, j], kind="stable") for j in range(d)]
        xs = [X[order[j], j] for j in range(d)]
        boundary = [xs[j][:-1] < xs[j][1:] for j in range(d)]
        splittable = [j for j in range(d) if boundary[j].any()]

        if logistic:
            p0 = min(max(y.mean(), 1e-12), 1.0 - 1e-12)
            self.base = float(np.log(p0 / (1.0 - p0)))
        else:
            self.base = float(y.mean())
        F = np.full(n, self.base)
        feat, thr, left, right = [], [], [], []

        for _ in range(spec.rounds if splittable else 0):
            if logistic:
                p = expit(F)
                g = p - y
                h = p * (1.0 - p)
            else:
                g = F - y
                h = np.ones(n)
            best_gain, best = -np.inf, None
            for j in splittable:
                cg = np.cumsum(g[order[j]])[:-1]
                ch = np.cumsum(h[order[j]])[:-1]
                G, H = cg[-1] + g[order[j]][-1], ch[-1] + h[order[j]][-1]
                gain = cg**2 / (ch + _LEAF_RIDGE) + (G - cg) ** 2 / (H - ch + _LEAF_RIDGE)
                gain[~boundary[j]] = -np.inf
                i = int(np.argmax(gain))
                if gain[i] > best_gain:
                    best_gain, best = gain[i], (j, i, cg[i], ch[i], G, H)
            j, i, cgl, chl, G, H = best
            lv = -cgl / (chl + _LEAF_RIDGE)
            rv = -(G - cgl) / (H - chl + _LEAF_RIDGE)
            t = 0.5 * (xs[j][i] + xs[j][i + 1])
            feat.append(j)
            thr.append(t)
            left.append(lv)
            right.append(rv)
            F = F + self.lr * np.where(X[:, j] <= t, lv, rv)

        self.feat = np.asarray(feat, dtype=np.int64)
        self.thr = np.asarray(thr)
        self.left = np.asarray(left)
        self.right = np.asarray(right)

    def raw(self, X):
        out = np.full(len(X), self.base)
        for j, t, lv, rv in zip(self.feat, self.thr, self.left, self.right):
            out += self.lr * np.where(X[:, j] <= t, lv, rv)
        if self.logistic:
            return expit(out)
        return out


class _KnnModel:
    """Mean of the k nearest training targets (Euclidean distance)."""

    _CHUNK = 512

    def __init__(self, X, y, k):
        self.X = X
        self.y = y
        self.k = min(k, len(X))
        self._sq = np.einsum("ij,ij->i", X, X)

    def raw(self, Q):
        # duplicated query rows (common with discrete features) get one
        # distance computation; results are identical to the row-by-row path
        if len(Q) > 64:
            uniq, inverse = np.unique(Q, axis=0, return_inverse=True)
            if len(uniq) * 2 <= len(Q):
                return self._raw_rows(uniq)[inverse]
        return self._raw_rows(Q)

    def _raw_rows(self, Q):
        out = np.empty(len(Q))
        for lo in range(0, len(Q), self._CHUNK):
            q = Q[lo : lo + self._CHUNK]
            d2 = np.einsum("ij,ij->i", q, q)[:, None] - 2.0 * q @ self.X.T + self._sq[None, :]
            idx = np.argpartition(d2, self.k - 1, axis=1)[:, : self.k]
            out[lo : lo + len(q)] = self.y[idx].mean(axis=1)
        return out


class ProbabilityModel:
    """Fitted treatment-probability model; predictions lie in [0, 1]."""

    def __init__(self, impl, eps_clip, n_features):
        self._impl = impl
        self.eps_clip = eps_clip
        self.n_features = n_features

    @property
    def coefficients(self):
        return getattr(self._impl, "coef", None)

    def predict(self, features, clip=False):
        X = self._check(features)
        p = np.minimum(np.maximum(self._impl.raw(X), 0.0), 1.0)
        if clip:
            p, _ = clip_probabilities(p, self.eps_clip)
        return p

    def fit(self, features, targets):
        # already fitted; allows sharing the learner protocol
        return self

    def _check(self, features):
        X = np.asarray(features, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) features, got {X.shape}")
        return X


class RegressionModel:
    """Fitted regression model with finite predictions."""

    def __init__(self, impl, n_features):
        self._impl = impl
        self.n_features = n_features

    @property
    def coefficients(self):
        return getattr(self._impl, "coef", None)

    def predict(self, features):
        X = np.asarray(features, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) features, got {X.shape}")
        return self._impl.raw(X)

    def fit(self, features, targets):
        return self


def fit_probability(features, labels, spec: LearnerSpec) -> ProbabilityModel:
    """Fit a treatment-probability model.

    Degenerate all-0 or all-1 labels yield the constant empirical
    frequency model rather than an error.
    """
    X, y = _check_xy(features, labels)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    if y.min() == y.max():
        impl = _ConstantModel(y[0])
    elif spec.kind == "logistic":
        impl = _LogisticModel(X, y)
    elif spec.kind == "boosted-stumps":
        impl = _StumpEnsembleModel(X, y, spec, logistic=True)
    elif spec.kind == "knn":
        impl = _KnnModel(X, y, spec.k)
    else:
        raise ValueError(f"kind {spec.kind!r} does not fit probabilities")
    return ProbabilityModel(impl, spec.eps_clip, X.shape[1])


def fit_regression(features, targets, spec: LearnerSpec) -> RegressionModel:
    """Fit an outcome or pseudo-outcome regression."""
    X, y = _check_xy(features, targets)
    if spec.kind == "linear":
        impl = _RidgeModel(X, y, spec.ridge)
    elif spec.kind == "boosted-stumps":
        impl = _StumpEnsembleModel(X, y, spec, logistic=False)
    elif spec.kind == "knn":
        impl = _KnnModel(X, y, spec.k)
    else:
        raise ValueError(f"kind {spec.kind!r} does not fit regressions")
    return RegressionModel(impl, X.shape[1])


def _fit_prob_like(learner, X, y):
    if isinstance(learner, LearnerSpec):
        return fit_probability(X, y, learner)
    return learner.fit(X, y)


def _fit_reg_like(learner, X, y):
    if isinstance(learner, LearnerSpec):
        return fit_regression(X, y, learner)
    return learner.fit(X, y)


@dataclass(frozen=True)
class NuisanceFit:
    """Out-of-fold predictions pi_hat, mu1_hat, mu0_hat aligned with record order."""

    pi: np.ndarray
    mu1: np.ndarray
    mu0: np.ndarray
    folds: FoldAssignment
    fallback_arms: tuple = ()

    def __post_init__(self):
        if np.any(self.pi < 0) or np.any(self.pi > 1):
            raise ValueError("propensity predictions must lie in [0, 1]")


def crossfit_nuisances(data, folds: FoldAssignment, spec_pi, spec_mu) -> NuisanceFit:
    """Cross-fitted propensity and arm-specific outcome regressions.

    For each fold k, models are fit on the complement of k and evaluated
    on fold k; mu is fit separately on the complement's treated and
    control subsets. A complement with an empty arm falls back to the
    complement's overall outcome mean and is reported in
    ``fallback_arms`` as (fold, arm).

    ``spec_pi`` and ``spec_mu`` may be :class:`LearnerSpec` or any object
    with ``fit(features, targets) -> model``; ``spec_mu`` may instead
    expose ``arm_learner(arm)`` to supply arm-specific learners (used by
    oracle pass-through bundles).
    """
    X, a, y = stack_records(data)
    n = len(y)
    if folds.n_subjects != n:
        raise ValueError(f"fold assignment covers {folds.n_subjects} subjects, data has {n}")
    pi = np.empty(n)
    mu = {0: np.empty(n), 1: np.empty(n)}
    fallbacks = []
    for k in range(1, folds.n_folds + 1):
        test = folds.fold_indices(k)
        train = folds.complement_indices(k)
        pi_model = _fit_prob_like(spec_pi, X[train], a[train].astype(float))
        pi[test] = pi_model.predict(X[test])
        for arm in (0, 1):
            if hasattr(spec_mu, "arm_learner"):
                model = spec_mu.arm_learner(arm).fit(X[train], y[train])
            else:
                sub = train[a[train] == arm]
                if len(sub) == 0:
                    model = RegressionModel(_ConstantModel(y[train].mean()), X.shape[1])
                    fallbacks.append((k, arm))
                else:
                    model = _fit_reg_like(spec_mu, X[sub], y[sub])
            mu[arm][test] = model.predict(X[test])
    return NuisanceFit(pi=pi, mu1=mu[1], mu0=mu[0], folds=folds, fallback_arms=tuple(fallbacks))
