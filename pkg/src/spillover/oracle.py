"""Ground-truth worlds for validating the estimators.

Household worlds are built from principal strata, so the causal
infectiousness contrast is known in closed form.  Trial worlds have
deterministic potential outcomes that depend on own treatment and the number
of other group members treated, which lets the population estimands be
computed exactly.  Cluster worlds carry a hidden confounder whose effect on
the observable regression is known analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.stats import binom

from ._rng import entity_rng, keyed_uniform
from .confounding import BiasSpecGeneral
from .data import ClusterData, GroupSummary, HouseholdSample, InfectStudy, TrialTable
from .errors import EstimationError, ValidationError
from .selection import DeltaFamily, expit

# -- households --------------------------------------------------------------


@dataclass(frozen=True)
class HouseholdWorld:
    """Two-person households described by the index person's principal stratum.

    ``doomed`` index persons are infected in either arm, ``protected`` only
    when unvaccinated and ``immune`` never.  No stratum is infected only
    when vaccinated, so monotonicity holds by construction.  ``q2`` is the
    secondary risk when the index is uninfected; it enters no estimand.
    """

    doomed: float
    protected: float
    immune: float
    q_doomed_v: float
    q_doomed_u: float
    q_protected_u: float
    q2: float = 0.0

    def __post_init__(self):
        for name in ("doomed", "protected", "immune", "q_doomed_v", "q_doomed_u",
                     "q_protected_u", "q2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v!r} is not a probability")
        total = self.doomed + self.protected + self.immune
        if abs(total - 1.0) > 1e-12:
            raise ValidationError(f"stratum probabilities sum to {total!r}, not 1")

    @property
    def protected_risk_not_higher(self):
        """Secondary risk of unvaccinated-index households is no higher in
        the protected stratum than in the doomed one."""
        return self.q_protected_u <= self.q_doomed_u


@dataclass(frozen=True)
class HouseholdTruth:
    p_v: float
    p_u: float
    p1: float
    p0: float
    pi_d: float
    pi_p: float
    theta: float
    gamma: float | None
    beta: float | None
    attack1: float
    attack0: float

    def study(self) -> InfectStudy:
        return InfectStudy(self.p1, self.p0, self.attack1, self.attack0)


def _logit(p):
    return math.log(p) - math.log1p(-p)


def true_household_quantities(world: HouseholdWorld) -> HouseholdTruth:
    infected0 = world.doomed + world.protected
    if infected0 == 0:
        raise EstimationError("no index infections in the unvaccinated arm (doomed + protected = 0)")
    if world.doomed == 0:
        raise EstimationError("empty doomed stratum: no infected vaccinated index cases")
    pi_d = world.doomed / infected0
    pi_p = 1.0 - pi_d
    p0 = pi_d * world.q_doomed_u + pi_p * world.q_protected_u
    gamma = world.q_protected_u if pi_p > 0 else None
    beta = None
    if gamma is not None and 0 < world.q_doomed_u < 1 and 0 < gamma < 1:
        beta = _logit(world.q_doomed_u) - _logit(gamma)
    return HouseholdTruth(
        p_v=world.q_doomed_v, p_u=world.q_doomed_u, p1=world.q_doomed_v, p0=p0,
        pi_d=pi_d, pi_p=pi_p, theta=world.q_doomed_u - p0, gamma=gamma, beta=beta,
        attack1=world.doomed, attack0=infected0,
    )


def simulate_households(world: HouseholdWorld, n, seed) -> HouseholdSample:
    """``n`` i.i.d. households; index vaccinated with probability 1/2."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    ids = np.arange(n, dtype=np.uint64)
    z1 = (keyed_uniform(seed, 1, ids) < 0.5).astype(np.int8)
    u = keyed_uniform(seed, 2, ids)
    doomed = u < world.doomed
    protected = (u >= world.doomed) & (u < world.doomed + world.protected)
    y1 = (doomed | (protected & (z1 == 0))).astype(np.int8)
    risk = np.where(y1 == 0, world.q2,
                    np.where(doomed, np.where(z1 == 1, world.q_doomed_v, world.q_doomed_u),
                             world.q_protected_u))
    y2 = (keyed_uniform(seed, 3, ids) < risk).astype(np.int8)
    return HouseholdSample(np.arange(n).astype(str).astype(object), z1, y1, y2)


def expected_counts(world: HouseholdWorld, n):
    """Expected numbers of index cases by arm among ``n`` households."""
    return n * 0.5 * world.doomed, n * 0.5 * (world.doomed + world.protected)


def adjusted_p_u_se(world: HouseholdWorld, n, adjust, h=1e-6):
    """Monte-Carlo SE of an adjusted p_u estimate from ``n`` households.

    ``adjust(study) -> p_u``.  Delta method with a central-difference
    gradient in (p0, attack1, attack0), which are estimated from independent
    binomial samples of sizes ``n0``, ``n/2`` and ``n/2``.
    """
    t = true_household_quantities(world)
    _, n0 = expected_counts(world, n)
    point = np.array([t.p0, t.attack1, t.attack0])
    var = np.array([t.p0 * (1 - t.p0) / n0,
                    t.attack1 * (1 - t.attack1) / (n / 2),
                    t.attack0 * (1 - t.attack0) / (n / 2)])
    grad = np.zeros(3)
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        hi, lo = point + step, point - step
        grad[k] = (adjust(InfectStudy(t.p1, *hi)) - adjust(InfectStudy(t.p1, *lo))) / (2 * h)
    return float(math.sqrt(np.sum(grad**2 * var)))


# -- two-stage trials --------------------------------------------------------

Rule = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TrialWorld:
    """Finite population of groups with count-dependent potential outcomes.

    ``rule(group, z, count)`` returns, for every member of ``group``, the
    outcome under own treatment ``z`` when ``count`` other members are
    treated (``z`` and ``count`` broadcast over members).  ``fractions`` maps
    each strategy label to the treated fraction; under mixed allocation a
    group of size n has ``round(fraction * n)`` treated.
    """

    sizes: tuple[int, ...]
    rule: Rule
    fractions: Mapping[str, float]
    allocation: str = "mixed"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        if any(n < 2 for n in self.sizes):
            raise ValidationError("group sizes must be at least 2")
        if self.allocation not in ("mixed", "bernoulli"):
            raise ValidationError(f"unknown allocation {self.allocation!r}")
        for label, f in self.fractions.items():
            if not 0.0 <= f <= 1.0:
                raise ValidationError(f"fraction for {label!r} is not in [0, 1]")

    def n_treated(self, label, group):
        return int(round(self.fractions[label] * self.sizes[group]))


def linear_rule(base, direct, spill, interaction=0.0, seed=0, spread=0.0):
    """Real-valued outcomes ``b_ij + direct*z + spill*c + interaction*z*c``.

    ``b_ij`` is ``base`` plus a fixed individual offset uniform on
    ``[0, spread)``.
    """
    def rule(group, z, count):
        z = np.asarray(z, dtype=float)
        c = np.asarray(count, dtype=float)
        n = max(z.size, c.size)
        b = base + spread * keyed_uniform(seed, 100 + group, np.arange(n))
        return b + direct * z + spill * c + interaction * z * c
    return rule


def binary_rule(base, direct, spill, seed=0):
    """Binary outcomes ``1{u_ij < base + direct*z + spill*c/(n-1)}`` with fixed ``u_ij``."""
    def rule(group, z, count):
        z = np.asarray(z, dtype=float)
        c = np.asarray(count, dtype=float)
        n = max(z.size, c.size)
        u = keyed_uniform(seed, 100 + group, np.arange(n))
        risk = np.clip(base + direct * z + spill * c / (n - 1), 0.0, 1.0)
        return (u < risk).astype(float)
    return rule


@dataclass(frozen=True)
class TrialEffects:
    """Population estimands in the reduction convention (see ``estimands``)."""

    direct_phi: float
    direct_psi: float
    indirect: float
    total: float
    overall: float
    mean_control: Mapping[str, float] = field(default_factory=dict)
    mean_treated: Mapping[str, float] = field(default_factory=dict)
    mean_overall: Mapping[str, float] = field(default_factory=dict)

    def as_dict(self):
        return {"direct_phi": self.direct_phi, "direct_psi": self.direct_psi,
                "indirect": self.indirect, "total": self.total, "overall": self.overall}


def _count_weights(n, k, z, weighting):
    """Law of the number of treated others for an individual with treatment z."""
    w = np.zeros(n)
    if weighting == "conditional":
        c = k - 1 if z == 1 else k
        if 0 <= c <= n - 1:
            w[c] = 1.0
    elif weighting == "unconditional":
        if k >= 1:
            w[k - 1] += k / n
        if k <= n - 1:
            w[k] += (n - k) / n
    elif weighting == "bernoulli":
        w = binom.pmf(np.arange(n), n - 1, k / n)
    else:
        raise ValidationError(f"unknown weighting {weighting!r}")
    return w


def _group_means(world, label, g, weighting):
    n = world.sizes[g]
    k = world.n_treated(label, g)
    out = {}
    for z in (0, 1):
        w = _count_weights(n, k, z, weighting)
        cs = np.flatnonzero(w)
        if len(cs) == 0:
            # nobody can have this treatment under mixed allocation
            out[z] = float("nan")
            continue
        vals = np.stack([world.rule(g, np.full(n, z), np.full(n, c)) for c in cs], axis=1)
        out[z] = float(np.mean(vals @ w[cs]))
    share = k / n
    overall = sum(s * out[z] for z, s in ((1, share), (0, 1 - share)) if s > 0)
    return out[0], out[1], overall


def true_trial_effects(world: TrialWorld, phi, psi, weighting="conditional") -> TrialEffects:
    """Exact population estimands, averaging group-level means over all groups.

    ``weighting`` is the law used for the count of treated others:
    ``"conditional"`` (given own treatment under mixed allocation),
    ``"unconditional"`` (mixed allocation, ignoring own treatment) or
    ``"bernoulli"`` (independent draws with probability k/n).
    """
    if max(world.sizes) > 10_000:
        raise ValidationError("group sizes above 10^4 are not supported")
    means = {}
    for label in (phi, psi):
        per = np.array([_group_means(world, label, g, weighting) for g in range(len(world.sizes))])
        means[label] = per.mean(axis=0)
    c_phi, t_phi, o_phi = means[phi]
    c_psi, t_psi, o_psi = means[psi]
    return TrialEffects(
        direct_phi=float(c_phi - t_phi), direct_psi=float(c_psi - t_psi),
        indirect=float(c_phi - c_psi), total=float(c_phi - t_psi), overall=float(o_phi - o_psi),
        mean_control={phi: float(c_phi), psi: float(c_psi)},
        mean_treated={phi: float(t_phi), psi: float(t_psi)},
        mean_overall={phi: float(o_phi), psi: float(o_psi)},
    )


def all_conventions(world: TrialWorld, phi, psi):
    return {w: true_trial_effects(world, phi, psi, w)
            for w in ("conditional", "unconditional", "bernoulli")}


def simulate_trial(world: TrialWorld, phi, psi, counts, seed) -> TrialTable:
    """Two-stage randomized trial with ``counts = (groups on phi, groups on psi)``.

    Outcomes must be binary so that each group reduces to case counts.
    """
    n_phi, n_psi = counts
    N = len(world.sizes)
    if n_phi < 1 or n_psi < 1 or n_phi + n_psi > N:
        raise ValidationError(f"cannot allocate {counts} groups out of {N}")
    order = entity_rng(seed, 0).permutation(N)
    labels = {int(g): phi for g in order[:n_phi]}
    labels.update({int(g): psi for g in order[n_phi:n_phi + n_psi]})
    groups = []
    for g in sorted(labels):
        label = labels[g]
        n = world.sizes[g]
        rng = entity_rng(seed, 1, g)
        if world.allocation == "mixed":
            z = np.zeros(n)
            z[rng.permutation(n)[: world.n_treated(label, g)]] = 1.0
        else:
            z = (rng.random(n) < world.fractions[label]).astype(float)
        y = world.rule(g, z, z.sum() - z)
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValidationError("simulate_trial needs binary outcomes")
        t = z == 1
        groups.append(GroupSummary(str(g), label, int(t.sum()), int(y[t].sum()),
                                   int((~t).sum()), int(y[~t].sum())))
    return TrialTable(tuple(groups), (phi, psi))


# -- confounded clusters -----------------------------------------------------


@dataclass(frozen=True)
class ClusterWorld:
    """Clusters with a hidden confounder ``U`` that shifts outcomes.

    Per member j: covariate ``l_j`` (Bernoulli(p_l) or standard normal),
    treatment ``Z_j ~ Bernoulli(expit(a0 + a1*l_j))``, confounder
    ``U_j = kappa*Z_j + rho*l_j + xi_j``; ``V_j`` sums the other members'
    ``U``.  With g the number of treated others and h the sum of others' l::

        Y = eta0 + eta_l*l + eta_h*h + psi_d0*z + psi_d1*z*g + psi_s*g
            + lam_u*U + tau*V + noise

    The effects on the treated are ``psi_d0 + psi_d1*g`` and ``psi_s*g``, and
    the selection-bias functions are ``lam_u*kappa*z`` and ``tau*kappa*g``.
    With binary l the regression on (z, g, l, h) is exactly linear.
    """

    size: int = 4
    l_law: str = "binary"
    p_l: float = 0.5
    a0: float = -0.3
    a1: float = 0.8
    kappa: float = 1.0
    rho: float = 0.5
    xi_sd: float = 1.0
    eta0: float = 1.0
    eta_l: float = 0.5
    eta_h: float = 0.2
    psi_d0: float = 1.0
    psi_d1: float = 0.3
    psi_s: float = 0.4
    lam_u: float = 0.6
    tau: float = 0.25
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.size < 2:
            raise ValidationError("cluster size must be at least 2")
        if self.l_law not in ("binary", "gaussian"):
            raise ValidationError(f"unknown covariate law {self.l_law!r}")
        if not 0 <= self.p_l <= 1 or self.xi_sd < 0 or self.noise_sd < 0:
            raise ValidationError("improper component law")

    @property
    def alpha(self):
        return np.array([self.a0, self.a1])

    @property
    def delta_d(self):
        return DeltaFamily("d1", (self.lam_u * self.kappa,))

    @property
    def delta_s(self):
        return DeltaFamily("s1", (self.tau * self.kappa,))

    @property
    def psi_d(self):
        return np.array([self.psi_d0, self.psi_d1])

    @property
    def psi_s_vec(self):
        return np.array([self.psi_s])

    @property
    def eta(self):
        """Coefficients of q(l, h) on (1, l, h); exact for binary l only."""
        if self.l_law != "binary":
            raise ValidationError("q(l, h) is linear in (1, l, h) only for binary l")
        e0, e1 = expit(self.a0), expit(self.a0 + self.a1)
        n = self.size
        return np.array([
            self.eta0 + self.lam_u * self.kappa * e0 + self.tau * self.kappa * (n - 1) * e0,
            self.eta_l + self.lam_u * (self.kappa * (e1 - e0) + self.rho),
            self.eta_h + self.tau * (self.kappa * (e1 - e0) + self.rho),
        ])


def _normal(seed, stream, ids):
    # Box-Muller on two keyed streams
    u1 = keyed_uniform(seed, stream, ids)
    u2 = keyed_uniform(seed, stream + 1, ids)
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class ClusterLedger:
    """Hidden confounder values, kept apart from the observable data."""

    cluster_id: np.ndarray
    individual_id: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def format(self, delimiter=","):
        lines = [delimiter.join(("cluster_id", "individual_id", "u", "v"))]
        for c, i, u, v in zip(self.cluster_id, self.individual_id, self.u, self.v):
            lines.append(delimiter.join((str(c), str(i), f"{u:.17g}", f"{v:.17g}")))
        return "\n".join(lines) + "\n"


def simulate_cluster_arrays(world: ClusterWorld, n_clusters, seed):
    """Columnar draw: arrays of shape (n_clusters, size) for l, z, u, v, y."""
    m, n = n_clusters, world.size
    ids = np.arange(m * n, dtype=np.uint64)
    if world.l_law == "binary":
        l = (keyed_uniform(seed, 10, ids) < world.p_l).astype(float)
    else:
        l = _normal(seed, 10, ids)
    l = l.reshape(m, n)
    z = (keyed_uniform(seed, 12, ids).reshape(m, n) < expit(world.a0 + world.a1 * l)).astype(float)
    u = world.kappa * z + world.rho * l + world.xi_sd * _normal(seed, 14, ids).reshape(m, n)
    v = u.sum(axis=1, keepdims=True) - u
    g = z.sum(axis=1, keepdims=True) - z
    h = l.sum(axis=1, keepdims=True) - l
    y = (world.eta0 + world.eta_l * l + world.eta_h * h + world.psi_d0 * z
         + world.psi_d1 * z * g + world.psi_s * g + world.lam_u * u + world.tau * v
         + world.noise_sd * _normal(seed, 16, ids).reshape(m, n))
    return {"l": l, "z": z, "u": u, "v": v, "y": y}


def simulate_clusters(world: ClusterWorld, n_clusters, seed):
    """Observable clusters plus the hidden (u, v) ledger."""
    if n_clusters < 1:
        raise ValidationError("n_clusters must be at least 1")
    a = simulate_cluster_arrays(world, n_clusters, seed)
    n = world.size
    clusters = []
    for i in range(n_clusters):
        clusters.append(ClusterData(f"c{i}", tuple(f"c{i}.{j}" for j in range(n)),
                                    a["z"][i], a["y"][i], a["l"][i][:, None]))
    ledger = ClusterLedger(
        cluster_id=np.repeat([c.cluster_id for c in clusters], n),
        individual_id=np.array([iid for c in clusters for iid in c.individual_ids]),
        u=a["u"].reshape(-1), v=a["v"].reshape(-1))
    return clusters, ledger


def features_from_arrays(arrays):
    """:class:`IndividualFeatures` straight from :func:`simulate_cluster_arrays`."""
    from .data import IndividualFeatures

    z, l, y = arrays["z"], arrays["l"], arrays["y"]
    m, n = z.shape
    g = z.sum(axis=1, keepdims=True) - z
    h = l.sum(axis=1, keepdims=True) - l
    return IndividualFeatures(
        cluster=np.repeat(np.arange(m), n), size=np.full(m * n, n), z=z.reshape(-1),
        g=g.reshape(-1), l=l.reshape(-1, 1), h=h.reshape(-1, 1), y=y.reshape(-1))


# -- discrete confounder worlds for the bias formulas -------------------------


@dataclass(frozen=True)
class DiscreteConfounderWorld:
    """No measured covariates; binary ``U`` per member, independent across members.

    ``Z_j | U_j ~ Bernoulli(expit(b0 + b1*U_j))``; ``V`` counts the other
    members with ``U = 1``.  The outcome mean is ``m(z, g) + shift(z, g, u, v)``
    with ``shift = lam*u + tau*v + kappa*z*u`` (additive when ``kappa = 0``).
    """

    size: int = 3
    p_u: float = 0.4
    b0: float = -0.2
    b1: float = 1.0
    lam: float = 1.0
    tau: float = 0.5
    kappa: float = 0.0
    m: Callable[[float, float], float] = lambda z, g: 1.0 + 0.5 * z + 0.2 * g

    @property
    def support(self):
        return tuple((u, v) for u in (0.0, 1.0) for v in range(self.size))

    def shift(self, z, g, u, v):
        return self.lam * u + self.tau * v + self.kappa * z * u

    def p_u_given_z(self, z):
        """P(U = 1 | Z = z) by Bayes' rule."""
        e1, e0 = expit(self.b0 + self.b1), expit(self.b0)
        pz1, pz0 = (e1, e0) if z == 1 else (1 - e1, 1 - e0)
        return self.p_u * pz1 / (self.p_u * pz1 + (1 - self.p_u) * pz0)

    def v_given_g(self, g):
        """Law of V given g of the other members treated (a convolution)."""
        n1 = self.size - 1
        dist = np.zeros(n1 + 1)
        dist[0] = 1.0
        for k in range(n1):
            p = self.p_u_given_z(1 if k < g else 0)
            dist = np.r_[dist * (1 - p), 0.0] + np.r_[0.0, dist * p]
            dist = dist[: n1 + 1]
        return dist

    def dist_at(self, z, g):
        pu = self.p_u_given_z(z)
        return np.outer([1 - pu, pu], self.v_given_g(int(g))).reshape(-1)

    @property
    def dist_marg(self):
        n1 = self.size - 1
        pv = np.array([math.comb(n1, k) * self.p_u**k * (1 - self.p_u) ** (n1 - k) for k in range(n1 + 1)])
        return np.outer([1 - self.p_u, self.p_u], pv).reshape(-1)

    def bias_spec(self, reference=(0.0, 0.0)) -> BiasSpecGeneral:
        spec = BiasSpecGeneral(self.support, self.shift, self.dist_at, self.dist_marg, (0.0, 0.0))
        return spec if tuple(reference) == (0.0, 0.0) else spec.with_reference(reference)

    def observed_mean(self, z, g):
        pts = np.array(self.support)
        s = np.array([self.shift(z, g, u, v) for u, v in pts])
        return self.m(z, g) + float(s @ self.dist_at(z, g))

    def causal_mean(self, z, g):
        pts = np.array(self.support)
        s = np.array([self.shift(z, g, u, v) for u, v in pts])
        return self.m(z, g) + float(s @ self.dist_marg)

    def true_bias(self, zg, zg_alt):
        """Observed contrast minus causal contrast, from the two means directly."""
        obs = self.observed_mean(*zg) - self.observed_mean(*zg_alt)
        causal = self.causal_mean(*zg) - self.causal_mean(*zg_alt)
        return obs - causal

    def mean_differences(self, zg, zg_alt):
        """(du, dv): differences in E[U] and E[V] between two exposure pairs."""
        pts = np.array(self.support)
        p1, p2 = self.dist_at(*zg), self.dist_at(*zg_alt)
        return float(pts[:, 0] @ (p1 - p2)), float(pts[:, 1] @ (p1 - p2))
