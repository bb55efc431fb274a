"""Nuisance estimation.

Outcome regression mu(y, w) = E(delta | Y = y, W = w) via a stacked
ensemble (non-negative least squares on out-of-fold predictions),
standardized density ratio g(y, w) = pi(y | w) / f(y) via a
cross-validated conditional histogram with a multinomial-logit link, and
empirical marginals of Y and W.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, nnls
from scipy.spatial import cKDTree
from scipy.special import logsumexp

PRED_CLIP = 1e-6
DEFAULT_G_FLOOR = 0.05


# ---------------------------------------------------------------------------
# empirical CDF


class EmpiricalCDF:
    """Right-continuous empirical distribution function."""

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float64)
        if len(values) == 0:
            raise ValueError("need at least one value")
        self.n = len(values)
        self.support, counts = np.unique(values, return_counts=True)
        self.masses = counts / self.n
        self.cum = np.cumsum(self.masses)

    def __call__(self, t):
        scalar = np.isscalar(t)
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        idx = np.searchsorted(self.support, t, side="right")
        out = np.where(idx > 0, self.cum[np.minimum(idx, len(self.cum)) - 1], 0.0)
        return float(out[0]) if scalar else out


def empirical_cdf(values) -> EmpiricalCDF:
    """F_n(t) = (1/n) sum 1(value_i <= t)."""
    return EmpiricalCDF(values)


# ---------------------------------------------------------------------------
# base learners


class MarginalMeanLearner:
    """Ignores features, predicts the training mean."""

    name = "marginal_mean"

    def fit(self, X, y, rng=None):
        self.mean_ = float(np.mean(y))
        return self

    def predict(self, X):
        return np.full(X.shape[0], self.mean_)


class LogisticLearner:
    """Ridge-stabilized logistic regression fit by IRLS."""

    def __init__(self, interactions=False, ridge=1e-4, max_iter=50):
        self.interactions = interactions
        self.ridge = ridge
        self.max_iter = max_iter
        self.name = "logistic_interactions" if interactions else "logistic_main"

    def _design(self, X):
        Z = (X - self.center_) / self.scale_
        cols = [np.ones(len(Z)), *Z.T]
        if self.interactions:
            p = Z.shape[1]
            for a in range(p):
                for b in range(a + 1, p):
                    cols.append(Z[:, a] * Z[:, b])
        return np.column_stack(cols)

    def fit(self, X, y, rng=None):
        self.center_ = X.mean(axis=0)
        self.scale_ = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        D = self._design(X)
        beta = np.zeros(D.shape[1])
        for _ in range(self.max_iter):
            p = 1.0 / (1.0 + np.exp(-np.clip(D @ beta, -30, 30)))
            g = D.T @ (y - p) - self.ridge * beta
            if np.max(np.abs(g)) < 1e-8 * len(y):
                break
            wdiag = p * (1 - p) + 1e-6
            H = D.T @ (wdiag[:, None] * D) + self.ridge * np.eye(D.shape[1])
            beta = beta + np.linalg.solve(H, g)
        self.beta_ = beta
        return self

    def predict(self, X):
        D = self._design(X)
        return 1.0 / (1.0 + np.exp(-np.clip(D @ self.beta_, -30, 30)))


class KNNLearner:
    """k-nearest-neighbor smoother on standardized features."""

    def __init__(self, k=None):
        self.k = k
        self.name = "knn"

    def fit(self, X, y, rng=None):
        self.center_ = X.mean(axis=0)
        self.scale_ = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        Z = (X - self.center_) / self.scale_
        self.k_ = self.k or max(5, int(round(len(y) ** 0.6)))
        self.k_ = min(self.k_, len(y))
        self.tree_ = cKDTree(Z)
        self.targets_ = np.asarray(y, dtype=np.float64)
        return self

    def predict(self, X):
        Z = (X - self.center_) / self.scale_
        _, idx = self.tree_.query(Z, k=self.k_)
        idx = np.atleast_2d(idx)
        if idx.ndim == 1:
            idx = idx[:, None]
        return self.targets_[idx].mean(axis=1)


class GBStumpsLearner:
    """Depth-2 gradient-boosted trees on squared loss, histogram splits."""

    def __init__(self, n_rounds=100, learning_rate=0.1, n_bins=32, min_leaf=10):
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.n_bins = n_bins
        self.min_leaf = min_leaf
        self.name = "gb_stumps"

    def _bin(self, X):
        binned = np.empty(X.shape, dtype=np.int64)
        for j in range(X.shape[1]):
            binned[:, j] = np.searchsorted(self.edges_[j], X[:, j], side="right")
        return binned

    def _best_split(self, binned, resid, rows):
        best = None  # (gain, feature, cut)
        n = len(rows)
        if n < 2 * self.min_leaf:
            return None
        tot = resid[rows].sum()
        for j in range(binned.shape[1]):
            cnt = np.bincount(binned[rows, j], minlength=self.n_bins + 1)
            sm = np.bincount(binned[rows, j], weights=resid[rows],
                             minlength=self.n_bins + 1)
            ccnt = np.cumsum(cnt)[:-1]
            csm = np.cumsum(sm)[:-1]
            valid = (ccnt >= self.min_leaf) & (n - ccnt >= self.min_leaf)
            if not np.any(valid):
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = csm ** 2 / ccnt + (tot - csm) ** 2 / (n - ccnt)
            gain = np.where(valid, gain, -np.inf)
            cut = int(np.argmax(gain))
            if best is None or gain[cut] > best[0]:
                best = (gain[cut], j, cut)
        return best

    def _grow(self, binned, resid, rows):
        # depth-2 tree: root split, then one split per child
        node = {"leaf": float(resid[rows].mean()) if len(rows) else 0.0}
        split = self._best_split(binned, resid, rows)
        if split is None:
            return node
        _, j, cut = split
        node.update(feature=j, cut=cut)
        left = rows[binned[rows, j] <= cut]
        right = rows[binned[rows, j] > cut]
        for key, sub in (("left", left), ("right", right)):
            child = {"leaf": float(resid[sub].mean()) if len(sub) else node["leaf"]}
            s2 = self._best_split(binned, resid, sub)
            if s2 is not None:
                _, j2, cut2 = s2
                lsub = sub[binned[sub, j2] <= cut2]
                rsub = sub[binned[sub, j2] > cut2]
                child.update(feature=j2, cut=cut2,
                             left={"leaf": float(resid[lsub].mean())},
                             right={"leaf": float(resid[rsub].mean())})
            node[key] = child
        return node

    def _eval_tree(self, node, binned):
        out = np.empty(binned.shape[0])
        stack = [(node, np.arange(binned.shape[0]))]
        while stack:
            nd, rows = stack.pop()
            if "feature" not in nd or "left" not in nd:
                out[rows] = nd["leaf"]
                continue
            mask = binned[rows, nd["feature"]] <= nd["cut"]
            stack.append((nd["left"], rows[mask]))
            stack.append((nd["right"], rows[~mask]))
        return out

    def fit(self, X, y, rng=None):
        self.edges_ = []
        for j in range(X.shape[1]):
            qs = np.quantile(X[:, j], np.linspace(0, 1, self.n_bins + 1)[1:-1])
            self.edges_.append(np.unique(qs))
        binned = self._bin(X)
        self.base_ = float(np.mean(y))
        pred = np.full(len(y), self.base_)
        self.trees_ = []
        rows = np.arange(len(y))
        for _ in range(self.n_rounds):
            resid = y - pred
            tree = self._grow(binned, resid, rows)
            self.trees_.append(tree)
            pred = pred + self.learning_rate * self._eval_tree(tree, binned)
        return self

    def predict(self, X):
        binned = self._bin(X)
        pred = np.full(X.shape[0], self.base_)
        for tree in self.trees_:
            pred = pred + self.learning_rate * self._eval_tree(tree, binned)
        return pred


# ---------------------------------------------------------------------------
# stacked ensemble


@dataclass(frozen=True)
class EnsembleSpec:
    """Library of base-learner factories plus CV settings."""

    factories: tuple
    folds: int = 10

    def __post_init__(self):
        if len(self.factories) < 1:
            raise ValueError("need at least one learner")
        if self.folds < 2:
            raise ValueError("need at least 2 CV folds")
        object.__setattr__(self, "factories", tuple(self.factories))


def default_ensemble_spec(folds=10) -> EnsembleSpec:
    """Full reduced library: mean, logistic (+interactions), kNN, boosting."""
    return EnsembleSpec(factories=(
        MarginalMeanLearner,
        lambda: LogisticLearner(interactions=False),
        lambda: LogisticLearner(interactions=True),
        KNNLearner,
        GBStumpsLearner,
    ), folds=folds)


def lean_ensemble_spec(folds=10) -> EnsembleSpec:
    """Fast library for simulation studies (no boosting)."""
    return EnsembleSpec(factories=(
        MarginalMeanLearner,
        lambda: LogisticLearner(interactions=False),
        lambda: LogisticLearner(interactions=True),
        KNNLearner,
    ), folds=folds)


class OutcomeRegression:
    """Fitted stacked ensemble for mu(y, w), predictions in [0, 1]."""

    def __init__(self, learners, weights, metadata):
        self.learners = learners
        self.weights = np.asarray(weights, dtype=np.float64)
        self.metadata = metadata

    def _predict_X(self, X):
        if self.metadata.get("degenerate"):
            return np.full(X.shape[0], self.metadata["constant"])
        pred = np.zeros(X.shape[0])
        for wgt, lrn in zip(self.weights, self.learners):
            if wgt > 0:
                pred += wgt * lrn.predict(X)
        return np.clip(pred, PRED_CLIP, 1.0 - PRED_CLIP)

    def predict(self, y, w):
        """mu at paired (y_i, w_i); y scalar or (m,), w (m, p)."""
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        y = np.broadcast_to(np.asarray(y, dtype=np.float64), (w.shape[0],))
        return self._predict_X(np.column_stack([y, w]))

    def predict_cross(self, ys, w):
        """mu on the grid ys x rows of w; returns (len(ys), n_w)."""
        ys = np.asarray(ys, dtype=np.float64)
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        m, nw = len(ys), w.shape[0]
        X = np.column_stack([np.repeat(ys, nw), np.tile(w, (m, 1))])
        return self._predict_X(X).reshape(m, nw)


def _kfold_indices(n, folds, rng):
    perm = rng.permutation(n)
    return np.array_split(perm, folds)


def fit_mu(d, spec: EnsembleSpec, seed: int,
           include_nonrespondents=False) -> OutcomeRegression:
    """Fit the outcome regression on respondents (y < c0).

    Stacking weights are non-negative least squares on out-of-fold
    predictions, renormalized to the simplex; if that degrades the CV
    risk, the single best learner is used instead.
    """
    mask = np.ones(d.n, dtype=bool) if include_nonrespondents else (d.y < d.c0)
    y = d.y[mask]
    delta = d.delta[mask].astype(np.float64)
    X = np.column_stack([y, d.w[mask]])
    n = len(y)
    if n < 2 * spec.folds:
        raise ValueError("need n >= 2 * folds respondents")
    if np.all(delta == delta[0]):
        warnings.warn("outcome indicator is constant; returning degenerate fit")
        const = float(np.clip(delta[0], PRED_CLIP, 1.0 - PRED_CLIP))
        return OutcomeRegression([], [], {"degenerate": True, "constant": const})

    master = np.random.SeedSequence(seed)
    L = len(spec.factories)
    streams = master.spawn(spec.folds * L + L + 1)
    rng_folds = np.random.default_rng(streams[-1])
    fold_idx = _kfold_indices(n, spec.folds, rng_folds)

    Z = np.empty((n, L))
    for fi, test in enumerate(fold_idx):
        train = np.setdiff1d(np.arange(n), test, assume_unique=False)
        for li, factory in enumerate(spec.factories):
            lrn = factory()
            lrn.fit(X[train], delta[train],
                    rng=np.random.default_rng(streams[fi * L + li]))
            Z[test, li] = lrn.predict(X[test])
    Z = np.clip(Z, PRED_CLIP, 1.0 - PRED_CLIP)

    cv_risks = np.mean((Z - delta[:, None]) ** 2, axis=0)
    wts, _ = nnls(Z, delta)
    if wts.sum() > 0:
        wts = wts / wts.sum()
        ens_risk = float(np.mean((Z @ wts - delta) ** 2))
    else:
        ens_risk = np.inf
    best = int(np.argmin(cv_risks))
    if ens_risk > cv_risks[best]:
        wts = np.zeros(L)
        wts[best] = 1.0
        ens_risk = float(cv_risks[best])

    fitted = []
    for li, factory in enumerate(spec.factories):
        lrn = factory()
        lrn.fit(X, delta, rng=np.random.default_rng(streams[spec.folds * L + li]))
        fitted.append(lrn)
    metadata = {
        "learner_names": [l.name for l in fitted],
        "weights": wts.tolist(),
        "cv_risks": cv_risks.tolist(),
        "ensemble_cv_risk": ens_risk,
        "folds": spec.folds,
        "n_fit": n,
    }
    return OutcomeRegression(fitted, wts, metadata)


# ---------------------------------------------------------------------------
# conditional histogram density ratio


def _w_design(w, interactions=True):
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    cols = [np.ones(w.shape[0]), *w.T]
    if interactions:
        p = w.shape[1]
        for a in range(p):
            for b in range(a + 1, p):
                cols.append(w[:, a] * w[:, b])
    return np.column_stack(cols)


def _fit_multinomial(D, labels, n_classes, l2=1e-3, max_iter=300):
    """Multinomial logit by L-BFGS; last class is the baseline."""
    n, dcols = D.shape
    if n_classes < 2:
        return np.zeros((dcols, 0))
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), labels] = 1.0

    def obj(theta):
        B = theta.reshape(dcols, n_classes - 1)
        logits = np.column_stack([D @ B, np.zeros(n)])
        lse = logsumexp(logits, axis=1)
        nll = np.sum(lse - logits[np.arange(n), labels]) + 0.5 * l2 * np.sum(B * B)
        P = np.exp(logits - lse[:, None])
        G = D.T @ (P[:, :-1] - Y[:, :-1]) + l2 * B
        return nll, G.ravel()

    res = minimize(obj, np.zeros(dcols * (n_classes - 1)), jac=True,
                   method="L-BFGS-B", options={"maxiter": max_iter})
    return res.x.reshape(dcols, n_classes - 1)


def _class_probs(B, D):
    n = D.shape[0]
    if B.shape[1] == 0:
        return np.ones((n, 1))
    logits = np.column_stack([D @ B, np.zeros(n)])
    lse = logsumexp(logits, axis=1)
    return np.exp(logits - lse[:, None])


class DensityRatio:
    """Conditional histogram density of Y given W with standardization.

    predict_g(y, w) = pi(y | w) / f(y) floored at g_floor, where
    f(y) = mean over the sample W_j of pi(y | W_j).
    """

    def __init__(self, edges, coef, interactions, has_atom, c0, w_sample,
                 g_floor, metadata):
        self.edges = np.asarray(edges, dtype=np.float64)
        self.widths = np.diff(self.edges)
        self.coef = coef
        self.interactions = interactions
        self.has_atom = has_atom
        self.c0 = c0
        self.g_floor = g_floor
        self.metadata = metadata
        # standardization: f per bin from the sample covariates
        D = _w_design(w_sample, interactions)
        P = _class_probs(coef, D)  # (n, C)
        self._mean_probs = P.mean(axis=0)
        nbins = len(self.widths)
        self._f_bins = self._mean_probs[:nbins] / self.widths
        self._f_atom = self._mean_probs[nbins] if has_atom else 0.0

    def _bin_index(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        idx = np.searchsorted(self.edges, y, side="right") - 1
        return np.clip(idx, 0, len(self.widths) - 1)

    def predict_pi(self, y, w):
        """pi(y_i | w_i); the c0 atom is reported as a point mass."""
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        y = np.broadcast_to(np.asarray(y, dtype=np.float64), (w.shape[0],))
        P = _class_probs(self.coef, _w_design(w, self.interactions))
        idx = self._bin_index(y)
        out = P[np.arange(len(y)), idx] / self.widths[idx]
        if self.has_atom:
            atom = y >= self.c0
            out = np.where(atom, P[:, -1], out)
        return out

    def predict_f(self, y):
        """Marginal density f(y) = E{pi(y | W)} over the sample."""
        scalar = np.isscalar(y)
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        out = self._f_bins[self._bin_index(y)]
        if self.has_atom:
            out = np.where(y >= self.c0, self._f_atom, out)
        return float(out[0]) if scalar else out

    def predict_g(self, y, w):
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        yb = np.broadcast_to(np.asarray(y, dtype=np.float64), (w.shape[0],))
        raw = self.predict_pi(yb, w) / self.predict_f(yb)
        return np.maximum(raw, self.g_floor)

    def predict_g_cross(self, y0, w):
        """g(y0, w_j) for a single y0 against rows of w."""
        return self.predict_g(np.full(np.atleast_2d(w).shape[0], y0), w)


def fit_density(d, bins=(3, 5, 10, 20), folds=10, seed=0,
                g_floor=DEFAULT_G_FLOOR, interactions=True) -> DensityRatio:
    """Cross-validated conditional histogram density of Y given W.

    Bin edges are marginal quantiles of respondent response times; the
    nonresponse atom at c0 (if present) is modeled as an extra class.
    The bin count is chosen by CV held-out log-likelihood.
    """
    if d.n < 2 * folds:
        raise ValueError("need n >= 2 * folds")
    resp = d.y < d.c0
    ry = d.y[resp]
    if len(ry) < 2:
        raise ValueError("need at least 2 respondents")
    has_atom = bool(np.any(~resp))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    fold_idx = _kfold_indices(d.n, folds, rng)

    span = ry.max() - ry.min()
    pad = max(span, 1.0) * 1e-9

    def make_edges(k):
        qs = np.quantile(ry, np.linspace(0, 1, k + 1))
        qs[0] -= pad
        qs[-1] += pad
        edges = np.unique(qs)
        return edges

    def labels_for(edges, y):
        nb = len(edges) - 1
        lab = np.clip(np.searchsorted(edges, y, side="right") - 1, 0, nb - 1)
        if has_atom:
            lab = np.where(y >= d.c0, nb, lab)
        return lab

    scores = {}
    for k in bins:
        edges = make_edges(k)
        nb = len(edges) - 1
        ncls = nb + (1 if has_atom else 0)
        widths = np.diff(edges)
        total = 0.0
        for test in fold_idx:
            train = np.setdiff1d(np.arange(d.n), test)
            lab_tr = labels_for(edges, d.y[train])
            B = _fit_multinomial(_w_design(d.w[train], interactions),
                                 lab_tr, ncls)
            P = _class_probs(B, _w_design(d.w[test], interactions))
            lab_te = labels_for(edges, d.y[test])
            pr = np.maximum(P[np.arange(len(test)), lab_te], 1e-12)
            dens = np.where(lab_te < nb, pr / widths[np.minimum(lab_te, nb - 1)], pr)
            total += np.sum(np.log(dens))
        scores[k] = total / d.n
    best_k = max(scores, key=lambda k: (scores[k], -k))

    edges = make_edges(best_k)
    nb = len(edges) - 1
    ncls = nb + (1 if has_atom else 0)
    lab = labels_for(edges, d.y)
    B = _fit_multinomial(_w_design(d.w, interactions), lab, ncls)
    metadata = {
        "cv_loglik": {int(k): float(v) for k, v in scores.items()},
        "chosen_bins": int(nb),
        "requested_bins": int(best_k),
        "merged_bins": int(best_k - nb),
        "has_atom": has_atom,
        "edges": edges.tolist(),
        "g_floor": g_floor,
    }
    dr = DensityRatio(edges, B, interactions, has_atom, d.c0, d.w, g_floor,
                      metadata)
    raw = dr.predict_pi(d.y, d.w) / dr.predict_f(d.y)
    metadata["truncated_fraction"] = float(np.mean(raw < g_floor))
    return dr


# ---------------------------------------------------------------------------
# bundle


@dataclass
class NuisanceFit:
    """Fitted nuisances: mu, g, and the empirical marginals of Y and W."""

    mu: OutcomeRegression
    g: DensityRatio
    F: EmpiricalCDF
    w_sample: np.ndarray  # empirical marginal of W (rows)

    def summary(self):
        return {"mu": self.mu.metadata, "g": self.g.metadata}
