"""Effects on the treated under interference with selection-bias functions.

The regression of Y on own treatment z, exposure summary g, own covariates
l and others' covariates h is reparameterized as::

    E[Y|z,g,l,h] = gamma_d(z,g,l,h) + delta_d(z,g,l,h) - sum_z' delta_d(z',g,l,h) f(z'|g,l,h)
                 + gamma_s(g,l,h)   + delta_s(g,l,h)   - sum_z* delta_s(g(z*),l,h) f(z*|l,h)
                 + q(l,h)

``gamma_d`` and ``gamma_s`` are the direct and spillover effects on the
treated, ``q`` the reference mean at (z0, g0) = (0, 0), and the ``delta``
functions encode unmeasured confounding.  For a fixed ``delta`` pair the
causal parameters are estimated in two steps: a treatment model fitted by
maximum likelihood, then an estimating equation with working independence.

Treatments within a cluster are modeled as conditionally independent given
covariates, so ``f(z'|g,l,h)`` is the individual's own propensity and the
count of treated others follows a Poisson-binomial law.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ._rng import entity_rng
from .data import ExposureSummaryFn, IndividualFeatures
from .errors import CapacityError, FitError, ValidationError

ENUMERATION_CAP = 20
GRAD_TOL = 1e-8
STEP_TOL = 1e-10
SEPARATION_LOGIT = 20.0
_TERM = re.compile(r"^(1|z|g|[lh][1-9][0-9]*)$")


# -- model terms ---------------------------------------------------------------

def _parse_term(term):
    factors = [f.strip() for f in term.split("*")]
    for f in factors:
        if not _TERM.match(f):
            raise ValidationError(f"bad factor {f!r} in term {term!r}")
    return tuple(factors)


def _factor(name, z, g, l, h):
    if name == "1":
        return np.ones(np.broadcast(z, g).shape)
    if name == "z":
        return z
    if name == "g":
        return g
    block = l if name[0] == "l" else h
    k = int(name[1:]) - 1
    if k >= block.shape[-1]:
        raise ValidationError(f"term {name!r} refers to a missing covariate column")
    return block[..., k]


def term_design(terms, z, g, l, h):
    """Columns of products of factors, e.g. ``("z", "z*g", "l1")``."""
    cols = []
    for t in terms:
        col = np.ones(np.broadcast(z, g).shape)
        for f in _parse_term(t):
            col = col * _factor(f, z, g, l, h)
        cols.append(col)
    return np.stack(cols, axis=-1) if cols else np.zeros(np.broadcast(z, g).shape + (0,))


@dataclass(frozen=True)
class LinearForm:
    terms: tuple[str, ...]
    linear = True

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            _parse_term(t)

    @property
    def n_params(self):
        return len(self.terms)

    def design(self, z, g, l, h):
        return term_design(self.terms, z, g, l, h)

    def value(self, params, z, g, l, h):
        return self.design(z, g, l, h) @ np.asarray(params, dtype=float)

    def jacobian(self, params, z, g, l, h):
        return self.design(z, g, l, h)

    def vanishes_with(self, factor):
        return all(factor in _parse_term(t) for t in self.terms)


@dataclass(frozen=True)
class ExpForm(LinearForm):
    """``exp(design @ params)``: a log-linear baseline mean."""

    linear = False

    def value(self, params, z, g, l, h):
        return np.exp(self.design(z, g, l, h) @ np.asarray(params, dtype=float))

    def jacobian(self, params, z, g, l, h):
        D = self.design(z, g, l, h)
        return np.exp(D @ np.asarray(params, dtype=float))[:, None] * D


# -- selection-bias families -------------------------------------------------

DELTA_KINDS = {"d1": 1, "d2": 2, "s1": 1, "s2": 2}


@dataclass(frozen=True)
class DeltaFamily:
    """Parametric selection-bias function.

    ``d1``: ``lam*z``; ``d2``: ``z*(lam1 + lam2*g)``;
    ``s1``: ``lam*g``; ``s2``: ``g*(lam1 + lam2*l[cov])``.
    All vanish at z = 0 (d-type) or g = 0 (s-type).
    """

    kind: str
    lam: tuple[float, ...] = (0.0,)
    cov: int = 0

    def __post_init__(self):
        if self.kind not in DELTA_KINDS:
            raise ValidationError(f"unknown delta family {self.kind!r}")
        lam = tuple(float(x) for x in np.atleast_1d(self.lam))
        if len(lam) == 1 and DELTA_KINDS[self.kind] == 2:
            lam = lam + (0.0,)
        if len(lam) != DELTA_KINDS[self.kind]:
            raise ValidationError(f"{self.kind} takes {DELTA_KINDS[self.kind]} parameter(s)")
        object.__setattr__(self, "lam", lam)

    @property
    def is_direct(self):
        return self.kind[0] == "d"

    @property
    def is_zero(self):
        return all(x == 0.0 for x in self.lam)

    def with_lam(self, lam):
        return replace(self, lam=tuple(np.atleast_1d(lam)))

    def __call__(self, z, g, l, h):
        z = np.asarray(z, dtype=float)
        g = np.asarray(g, dtype=float)
        if self.kind == "d1":
            return self.lam[0] * z
        if self.kind == "d2":
            return z * (self.lam[0] + self.lam[1] * g)
        if self.kind == "s1":
            return self.lam[0] * g
        return g * (self.lam[0] + self.lam[1] * np.asarray(l)[..., self.cov])


# -- treatment model ----------------------------------------------------------

def expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class PropensitySpec:
    """Logistic model for each individual's treatment given covariates.

    ``terms`` use the factors ``1``, ``l<k>`` and ``h<k>``.  With
    ``level="cluster"`` the ``l<k>`` factors are replaced by cluster means,
    so members of a cluster share one propensity (an exchangeable law for
    the count treated).
    """

    terms: tuple[str, ...] = ("1", "l1")
    level: str = "individual"

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            if any(f in ("z", "g") for f in _parse_term(t)):
                raise ValidationError("propensity terms may not involve z or g")
        if self.level not in ("individual", "cluster"):
            raise ValidationError(f"unknown propensity level {self.level!r}")

    def design(self, F: IndividualFeatures):
        l = F.l
        if self.level == "cluster":
            sums = np.zeros((F.cluster.max() + 1, l.shape[1]))
            np.add.at(sums, F.cluster, l)
            l = (sums / np.bincount(F.cluster)[:, None])[F.cluster]
        return term_design(self.terms, np.zeros(len(F)), np.zeros(len(F)), l, F.h)


@dataclass(frozen=True)
class PropensityFit:
    spec: PropensitySpec
    alpha: np.ndarray
    iterations: int
    grad_norm: float
    loglik: float

    def predict(self, F: IndividualFeatures):
        return expit(self.spec.design(F) @ self.alpha)


def _dependent_columns(X, names):
    bad = []
    rank = 0
    for j in range(X.shape[1]):
        r = np.linalg.matrix_rank(X[:, : j + 1])
        if r == rank:
            bad.append(names[j])
        rank = r
    return bad


def _logit_loglik(X, z, alpha):
    eta = X @ alpha
    return float(np.sum(z * eta - np.logaddexp(0.0, eta)))


def _check_separation(X, alpha, spec, it):
    # |logit| > 20 means a fitted probability within 2e-9 of 0 or 1
    if np.max(np.abs(X @ alpha)) > SEPARATION_LOGIT:
        big = [spec.terms[j] for j in np.argsort(-np.abs(alpha))[:2]]
        raise FitError("treatment model appears separated (fitted probabilities 0 or 1); "
                       f"largest coefficient(s): {', '.join(big)}",
                       {"alpha": alpha.tolist(), "iterations": it})


def fit_propensity(F: IndividualFeatures, spec=PropensitySpec(), max_iter=100) -> PropensityFit:
    """Maximize the treatment log-likelihood by Newton-Raphson (IRLS).

    Converges when the score norm drops below 1e-8.  Rank-deficient designs
    and separated data raise :class:`FitError` naming the offending columns.
    """
    X = spec.design(F)
    z = np.asarray(F.z, dtype=float)
    bad = _dependent_columns(X, spec.terms)
    if bad:
        raise FitError(f"treatment design is rank deficient; dependent column(s): {', '.join(bad)}",
                       {"columns": bad})
    alpha = np.zeros(X.shape[1])
    ll = _logit_loglik(X, z, alpha)
    for it in range(1, max_iter + 1):
        p = expit(X @ alpha)
        grad = X.T @ (z - p)
        gnorm = float(np.linalg.norm(grad))
        _check_separation(X, alpha, spec, it)
        if gnorm < GRAD_TOL:
            return PropensityFit(spec, alpha, it - 1, gnorm, ll)
        w = p * (1 - p)
        hess = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise FitError("singular information matrix in treatment model",
                           {"iterations": it, "grad_norm": gnorm}) from None
        t = 1.0
        while True:
            cand = alpha + t * step
            ll_new = _logit_loglik(X, z, cand)
            if ll_new >= ll - 1e-12 or t < 1e-8:
                break
            t *= 0.5
        alpha, ll = cand, ll_new
    raise FitError("treatment model did not converge",
                   {"iterations": max_iter, "grad_norm": gnorm})


# -- the selection model -----------------------------------------------------

@dataclass(frozen=True)
class SelectionModel:
    gamma_d: LinearForm = LinearForm(("z", "z*g"))
    gamma_s: LinearForm = LinearForm(("g",))
    q: LinearForm = LinearForm(("1", "l1", "h1"))
    propensity: PropensitySpec = PropensitySpec()
    delta_d: DeltaFamily = DeltaFamily("d1")
    delta_s: DeltaFamily = DeltaFamily("s1")
    g_summary: ExposureSummaryFn = ExposureSummaryFn("count-of-others")

    def __post_init__(self):
        if not self.gamma_d.linear or not self.gamma_d.vanishes_with("z"):
            raise ValidationError("gamma_d must be linear with every term containing z")
        if not self.gamma_s.linear or not self.gamma_s.vanishes_with("g"):
            raise ValidationError("gamma_s must be linear with every term containing g")
        if not self.delta_d.is_direct or self.delta_s.is_direct:
            raise ValidationError("delta_d must be a d-family and delta_s an s-family")
        if not self.g_summary.scalar:
            raise ValidationError("g must be a scalar summary (count or mean of others)")

    def with_delta(self, lam_d, lam_s):
        return replace(self, delta_d=self.delta_d.with_lam(lam_d),
                       delta_s=self.delta_s.with_lam(lam_s))

    @property
    def names(self):
        return ([f"psi_d[{t}]" for t in self.gamma_d.terms]
                + [f"psi_s[{t}]" for t in self.gamma_s.terms]
                + [f"eta[{t}]" for t in self.q.terms])

    @property
    def blocks(self):
        a = self.gamma_d.n_params
        b = a + self.gamma_s.n_params
        return slice(0, a), slice(a, b), slice(b, b + self.q.n_params)


def others_count_distribution(e_others):
    """Poisson-binomial law of the number treated among others.

    ``e_others`` has shape (..., n-1); returns shape (..., n).
    """
    e = np.asarray(e_others, dtype=float)
    dist = np.zeros(e.shape[:-1] + (e.shape[-1] + 1,))
    dist[..., 0] = 1.0
    for k in range(e.shape[-1]):
        p = e[..., k : k + 1]
        shifted = dist[..., :-1] * p
        dist *= 1.0 - p
        dist[..., 1:] += shifted
    return dist


def _delta_s_centering_collapse(model, g_values_by_count, l, h, dist):
    # sum_c P(count=c) delta_s(g(c), l, h)
    dvals = model.delta_s(0.0, g_values_by_count, l[:, None, :], h[:, None, :])
    return np.sum(dist * dvals, axis=-1)


def delta_s_centering_enumerate(model, e_others, l, h, n):
    """Brute-force sum over all 2**(n-1) treatment vectors of the others."""
    e = np.asarray(e_others, dtype=float)
    if len(e) > ENUMERATION_CAP:
        raise CapacityError(f"cannot enumerate {len(e)} others (cap {ENUMERATION_CAP})")
    total = 0.0
    l = np.asarray(l, dtype=float)
    h = np.asarray(h, dtype=float)
    for zs in itertools.product((0, 1), repeat=len(e)):
        zs = np.array(zs)
        prob = float(np.prod(np.where(zs == 1, e, 1 - e)))
        g = model.g_summary.from_count(zs.sum(), n)
        total += prob * float(model.delta_s(0.0, g, l, h))
    return total


@dataclass(frozen=True)
class MeanParams:
    psi_d: np.ndarray
    psi_s: np.ndarray
    eta: np.ndarray

    @property
    def vector(self):
        return np.concatenate([self.psi_d, self.psi_s, self.eta])


def reparameterized_mean(model: SelectionModel, params: MeanParams, z, g, l, h,
                         p_self, p_others, method="collapse"):
    """E[Y|z,g,l,h] for one individual.

    ``p_self`` is the individual's propensity and ``p_others`` those of the
    other members.  ``method="enumerate"`` sums over every treatment vector
    of the others; ``"collapse"`` uses the law of their count.
    """
    l = np.atleast_1d(np.asarray(l, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    p_others = np.atleast_1d(np.asarray(p_others, dtype=float))
    n = len(p_others) + 1
    if method == "enumerate":
        cs = delta_s_centering_enumerate(model, p_others, l, h, n)
    elif method == "collapse":
        dist = others_count_distribution(p_others[None, :])
        gvals = model.g_summary.from_count(np.arange(n, dtype=float), n)[None, :]
        cs = float(_delta_s_centering_collapse(model, gvals, l[None, :], h[None, :], dist)[0])
    else:
        raise ValidationError(f"unknown method {method!r}")
    zz, gg, ll, hh = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (z, g, l[None, :], h[None, :]))
    cd = model.delta_d(1.0, gg, ll, hh) * p_self + model.delta_d(0.0, gg, ll, hh) * (1 - p_self)
    offset = model.delta_d(zz, gg, ll, hh) - cd + model.delta_s(zz, gg, ll, hh) - cs
    mean = (model.gamma_d.value(params.psi_d, zz, gg, ll, hh)
            + model.gamma_s.value(params.psi_s, zz, gg, ll, hh)
            + model.q.value(params.eta, zz, gg, ll, hh) + offset)
    return float(mean[0])


def _cluster_order(F):
    order = np.argsort(F.cluster, kind="stable")
    return order


def delta_offset(model: SelectionModel, F: IndividualFeatures, e):
    """The delta-dependent part of the mean for every individual."""
    if model.delta_d.is_zero and model.delta_s.is_zero:
        return np.zeros(len(F))
    z, g, l, h = F.z, F.g, F.l, F.h
    cd = model.delta_d(1.0, g, l, h) * e + model.delta_d(0.0, g, l, h) * (1 - e)
    offset = model.delta_d(z, g, l, h) - cd + model.delta_s(z, g, l, h)
    if model.delta_s.is_zero:
        return offset
    cs = np.empty(len(F))
    order = _cluster_order(F)
    sizes = F.size[order]
    starts = np.flatnonzero(np.r_[True, np.diff(F.cluster[order]) != 0])
    by_size: dict[int, list[int]] = {}
    for s in starts:
        by_size.setdefault(int(sizes[s]), []).append(s)
    for n, st in by_size.items():
        rows = order[(np.asarray(st)[:, None] + np.arange(n)[None, :])]  # (m, n)
        E = e[rows]
        # leave-one-out propensities for each member: (m, n, n-1)
        mask = ~np.eye(n, dtype=bool)
        others = np.broadcast_to(E[:, None, :], (E.shape[0], n, n))[:, mask].reshape(E.shape[0], n, n - 1)
        dist = others_count_distribution(others)  # (m, n, n)
        gvals = model.g_summary.from_count(np.arange(n, dtype=float), n)
        flat = rows.reshape(-1)
        d = dist.reshape(-1, n)
        cs[flat] = _delta_s_centering_collapse(model, np.broadcast_to(gvals, d.shape), l[flat], h[flat], d)
    return offset - cs


@dataclass(frozen=True)
class FitResult:
    model: SelectionModel
    params: MeanParams
    propensity: PropensityFit
    iterations: int
    residual_norm: float
    converged: bool = True
    se: np.ndarray | None = None
    sandwich_free: bool = True

    @property
    def psi_d(self):
        return self.params.psi_d

    @property
    def psi_s(self):
        return self.params.psi_s

    @property
    def eta(self):
        return self.params.eta

    @property
    def alpha(self):
        return self.propensity.alpha

    @property
    def names(self):
        return self.model.names


def _structural_design(model, F, params=None):
    parts = []
    for form, blk in zip((model.gamma_d, model.gamma_s, model.q), model.blocks):
        p = None if params is None else params[blk]
        parts.append(form.jacobian(p, F.z, F.g, F.l, F.h))
    return np.column_stack(parts)


def _structural_mean(model, F, theta):
    d, s, q = model.blocks
    return (model.gamma_d.value(theta[d], F.z, F.g, F.l, F.h)
            + model.gamma_s.value(theta[s], F.z, F.g, F.l, F.h)
            + model.q.value(theta[q], F.z, F.g, F.l, F.h))


def _split(model, theta):
    d, s, q = model.blocks
    return MeanParams(theta[d].copy(), theta[s].copy(), theta[q].copy())


def fit_gee(F: IndividualFeatures, model: SelectionModel, propensity: PropensityFit,
            max_iter=200) -> FitResult:
    """Solve sum_ij d(eps_ij)/d(theta) * eps_ij = 0 with working independence.

    For mean functions linear in the parameters this is least squares on
    ``y - offset``; otherwise damped Gauss-Newton until the step norm is
    below 1e-10.
    """
    e = propensity.predict(F)
    target = F.y - delta_offset(model, F, e)
    p = sum(f.n_params for f in (model.gamma_d, model.gamma_s, model.q))
    if all(f.linear for f in (model.gamma_d, model.gamma_s, model.q)):
        X = _structural_design(model, F)
        bad = _dependent_columns(X, model.names)
        if bad:
            raise FitError(f"singular normal equations; dependent column(s): {', '.join(bad)}",
                           {"columns": bad})
        theta = np.linalg.lstsq(X, target, rcond=None)[0]
        score = X.T @ (target - X @ theta)
        return FitResult(model, _split(model, theta), propensity, 1, float(np.linalg.norm(score)))

    theta = np.zeros(p)
    resid = target - _structural_mean(model, F, theta)
    ss = float(resid @ resid)
    trajectory = []
    for it in range(1, max_iter + 1):
        J = _structural_design(model, F, theta)
        step = np.linalg.lstsq(J, resid, rcond=None)[0]
        t = 1.0
        while True:
            cand = theta + t * step
            r_new = target - _structural_mean(model, F, cand)
            ss_new = float(r_new @ r_new)
            if np.isfinite(ss_new) and ss_new <= ss:
                break
            t *= 0.5
            if t < 1e-12:
                raise FitError("damped Gauss-Newton could not reduce the residual",
                               {"trajectory": trajectory, "iterations": it})
        theta, resid, ss = cand, r_new, ss_new
        snorm = float(np.linalg.norm(t * step))
        trajectory.append((it, ss, snorm))
        if snorm < STEP_TOL:
            J = _structural_design(model, F, theta)
            return FitResult(model, _split(model, theta), propensity, it,
                             float(np.linalg.norm(J.T @ resid)))
    raise FitError(f"estimating equations did not converge in {max_iter} iterations",
                   {"trajectory": trajectory})


def fit(F: IndividualFeatures, model: SelectionModel, propensity: PropensityFit | None = None):
    """Two-step fit: treatment model (unless given), then the estimating equation."""
    if propensity is None:
        propensity = fit_propensity(F, model.propensity)
    return fit_gee(F, model, propensity)


def fit_ml(F: IndividualFeatures, model: SelectionModel, start: FitResult | None = None):
    """Joint maximum likelihood with independent Gaussian residuals.

    Maximizes ``sum log N(eps_ij; 0, sigma^2) + log f(Z|L; alpha)`` over the
    mean parameters and ``alpha`` together (``sigma^2`` profiled out).
    Starts from the two-step solution.
    """
    from scipy.optimize import minimize

    start = start or fit(F, model)
    X_a = model.propensity.design(F)
    z = np.asarray(F.z, dtype=float)
    na = X_a.shape[1]
    N = len(F)

    def negll(x):
        alpha, theta = x[:na], x[na:]
        e = expit(X_a @ alpha)
        r = F.y - delta_offset(model, F, e) - _structural_mean(model, F, theta)
        return 0.5 * N * math.log(float(r @ r) / N) - _logit_loglik(X_a, z, alpha)

    x0 = np.concatenate([start.alpha, start.params.vector])
    res = minimize(negll, x0, method="BFGS", options={"gtol": 1e-9, "maxiter": 2000})
    if not res.success and np.linalg.norm(res.jac) > 1e-5:
        raise FitError(f"joint likelihood maximization failed: {res.message}",
                       {"grad_norm": float(np.linalg.norm(res.jac))})
    alpha, theta = res.x[:na], res.x[na:]
    prop = PropensityFit(model.propensity, alpha, int(res.nit), float(np.linalg.norm(res.jac[:na])),
                         _logit_loglik(X_a, z, alpha))
    return FitResult(model, _split(model, theta), prop, int(res.nit),
                     float(np.linalg.norm(res.jac[na:])))


# -- resampling and sweeps ---------------------------------------------------

def subset_clusters(F: IndividualFeatures, picks):
    """Features for the clusters ``picks`` (indices, repeats allowed), renumbered."""
    order = _cluster_order(F)
    starts = np.flatnonzero(np.r_[True, np.diff(F.cluster[order]) != 0])
    ends = np.r_[starts[1:], len(order)]
    rows, new_cluster = [], []
    for new, c in enumerate(picks):
        idx = order[starts[c]:ends[c]]
        rows.append(idx)
        new_cluster.append(np.full(len(idx), new))
    rows = np.concatenate(rows)
    return IndividualFeatures(
        cluster=np.concatenate(new_cluster), size=F.size[rows], z=F.z[rows], g=F.g[rows],
        l=F.l[rows], h=F.h[rows], y=F.y[rows],
        cluster_ids=tuple(F.cluster_ids[c] for c in picks) if F.cluster_ids else (),
    )


def n_clusters(F):
    return int(F.cluster.max()) + 1


def cluster_bootstrap(F: IndividualFeatures, model: SelectionModel, n_boot=500, seed=0):
    """Standard errors of the mean parameters by resampling whole clusters.

    Each replicate refits the treatment model and the estimating equation.
    Replicates that fail to fit are dropped; the count used is returned.
    """
    m = n_clusters(F)
    draws = []
    for b in range(n_boot):
        picks = entity_rng(seed, 0xB007, b).integers(0, m, size=m)
        try:
            draws.append(fit(subset_clusters(F, picks), model).params.vector)
        except FitError:
            continue
    if len(draws) < 2:
        raise FitError("fewer than two bootstrap replicates could be fitted")
    return np.std(np.array(draws), axis=0, ddof=1), len(draws)


@dataclass(frozen=True)
class SweepRow:
    lam_d: tuple[float, ...]
    lam_s: tuple[float, ...]
    result: FitResult | None
    error: str = ""
    n_boot_used: int = 0


def sensitivity_sweep(F: IndividualFeatures, template: SelectionModel,
                      grid: Sequence[tuple], n_boot=0, seed=0, propensity=None):
    """Refit over a finite set of (lam_d, lam_s) values.

    The grid must contain the ignorability point (all lambdas zero).  The
    treatment model is fitted once and shared by all rows.
    """
    grid = [(tuple(np.atleast_1d(ld).astype(float)), tuple(np.atleast_1d(ls).astype(float)))
            for ld, ls in grid]
    if not any(all(v == 0 for v in ld + ls) for ld, ls in grid):
        raise ValidationError("the sensitivity grid must include the zero (ignorability) point")
    propensity = propensity or fit_propensity(F, template.propensity)
    rows = []
    for ld, ls in grid:
        model = template.with_delta(ld, ls)
        try:
            res = fit_gee(F, model, propensity)
            used = 0
            if n_boot:
                se, used = cluster_bootstrap(F, model, n_boot, seed)
                res = replace(res, se=se)
        except FitError as exc:
            rows.append(SweepRow(ld, ls, None, str(exc)))
        else:
            rows.append(SweepRow(ld, ls, res, "", used))
    return rows


# -- goodness of fit ---------------------------------------------------------

@dataclass(frozen=True)
class CountFit:
    """Observed vs expected number of clusters by count treated, per cluster size."""

    size: int
    observed: np.ndarray
    expected: np.ndarray
    pearson: float
    df: int = field(default=0)


def count_goodness_of_fit(F: IndividualFeatures, propensity: PropensityFit):
    e = propensity.predict(F)
    order = _cluster_order(F)
    starts = np.flatnonzero(np.r_[True, np.diff(F.cluster[order]) != 0])
    ends = np.r_[starts[1:], len(order)]
    tables: dict[int, list] = {}
    for s, t in zip(starts, ends):
        idx = order[s:t]
        n = len(idx)
        obs, exp = tables.setdefault(n, [np.zeros(n + 1), np.zeros(n + 1)])
        obs[int(F.z[idx].sum())] += 1
        exp += others_count_distribution(e[idx])
    out = []
    for n, (obs, exp) in sorted(tables.items()):
        keep = exp > 0
        pearson = float(np.sum((obs[keep] - exp[keep]) ** 2 / exp[keep]))
        out.append(CountFit(n, obs, exp, pearson, int(keep.sum()) - 1))
    return out
