"""Crude and principal-stratum infectiousness contrasts for households of two.

Under monotonicity (vaccinating the index person never causes their
infection) the index-infected households split into the *doomed* stratum,
infected in either arm, and the *protected* stratum, infected only when
unvaccinated.  Among infected unvaccinated index cases the doomed share is
``pi_D = attack1 / attack0`` and the protected share ``pi_P = 1 - pi_D``.

The causal contrast compares ``p_v`` and ``p_u``, the secondary attack
probabilities in the doomed stratum with the index vaccinated and
unvaccinated.  ``p_v`` equals the observed ``p1``; ``p_u`` needs a
sensitivity parameter, in one of three parameterizations:

``theta``
    additive shift, ``p_u = p0 + theta``;
``gamma``
    secondary attack probability in the protected stratum,
    ``p0 = gamma * pi_P + p_u * pi_D``;
``beta``
    log odds ratio of secondary infection, doomed vs protected.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from statistics import NormalDist

from .data import InfectStudy
from .errors import NumericalError, RangeError, ValidationError

log = logging.getLogger(__name__)

KINDS = ("theta", "gamma", "beta")
BACKSUB_TOL = 1e-10


@dataclass(frozen=True)
class InfectEffect:
    p_v: float
    p_u: float
    rd_ci: tuple[float, float] | None = None

    @property
    def risk_difference(self):
        return self.p_v - self.p_u

    @property
    def risk_ratio(self):
        return self.p_v / self.p_u if self.p_u > 0 else None

    @property
    def odds_ratio(self):
        if self.p_u <= 0 or self.p_v >= 1 or self.p_u >= 1:
            return None
        return self.p_v * (1 - self.p_u) / (self.p_u * (1 - self.p_v))

    @property
    def efficacy(self):
        rr = self.risk_ratio
        return None if rr is None else 1.0 - rr

    def scales(self):
        return {"rd": self.risk_difference, "rr": self.risk_ratio,
                "or_": self.odds_ratio, "efficacy": self.efficacy}


def _wald_rd_ci(study: InfectStudy, level):
    if study.n1 is None or study.n0 is None or not study.n1 or not study.n0:
        return None
    z = NormalDist().inv_cdf(0.5 + level / 2)
    se = math.sqrt(study.p1 * (1 - study.p1) / study.n1 + study.p0 * (1 - study.p0) / study.n0)
    rd = study.p1 - study.p0
    return (rd - z * se, rd + z * se)


def crude_effect(study: InfectStudy, level=0.95) -> InfectEffect:
    """p1 versus p0, with a Wald interval on the difference when counts are known."""
    return InfectEffect(study.p1, study.p0, _wald_rd_ci(study, level))


# -- theta -------------------------------------------------------------------

def theta_range(study):
    return (-study.p0, 1.0 - study.p0)


def theta_adjust(study: InfectStudy, theta, level=0.95) -> InfectEffect:
    lo, hi = theta_range(study)
    if not lo <= theta <= hi:
        raise RangeError("theta", theta, lo, hi)
    ci = _wald_rd_ci(study, level)
    if ci is not None:
        ci = (ci[0] - theta, ci[1] - theta)
    return InfectEffect(study.p1, study.p0 + theta, ci)


# -- gamma -------------------------------------------------------------------

def _fractions(study):
    study.check_monotone()
    pi_d = study.doomed_fraction
    if pi_d <= 0:
        raise ValidationError("doomed fraction is 0 (no infected vaccinated index cases)")
    return pi_d, 1.0 - pi_d


def gamma_range(study):
    """Admissible gamma keeping ``p_u`` inside [0, 1]; ``None`` if pi_P = 0."""
    pi_d, pi_p = _fractions(study)
    if pi_p == 0:
        return None
    return (max(0.0, (study.p0 - pi_d) / pi_p), min(1.0, study.p0 / pi_p))


def p_u_from_gamma(p0, pi_d, gamma):
    return (p0 - gamma * (1.0 - pi_d)) / pi_d


def gamma_adjust(study: InfectStudy, gamma) -> InfectEffect:
    pi_d, pi_p = _fractions(study)
    rng = gamma_range(study)
    if rng is None:
        return InfectEffect(study.p1, study.p0)
    if not rng[0] <= gamma <= rng[1]:
        raise RangeError("gamma", gamma, *rng)
    p_u = p_u_from_gamma(study.p0, pi_d, gamma)
    # endpoints can leave p_u a few ulps outside [0, 1]
    return InfectEffect(study.p1, min(1.0, max(0.0, p_u)))


# -- beta --------------------------------------------------------------------

def _stable_quadratic_roots(a, b, c):
    """Real roots of a*x**2 + b*x + c, avoiding cancellation."""
    disc = b * b - 4 * a * c
    if disc < 0:
        if disc > -1e-14 * max(1.0, b * b):
            disc = 0.0
        else:
            return ()
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    roots = []
    if a != 0:
        roots.append(q / a)
    if q != 0:
        roots.append(c / q)
    return tuple(roots)


def beta_quadratic(p0, pi_p, beta):
    """Coefficients (a, b, c) of a*p_u**2 + b*p_u + c = 0.

    Obtained by eliminating gamma from ``p_u = gamma*B/(1 + gamma*(B - 1))``
    and ``p0 = gamma*V + p_u*(1 - V)`` with ``B = exp(beta)``, ``V = pi_P``.
    """
    B = math.exp(beta)
    V = pi_p
    return ((B - 1.0) * (1.0 - V), -(p0 * (B - 1.0) + (1.0 - V) * B + V), p0 * B)


def p_u_from_beta(p0, pi_d, beta):
    """Doomed-stratum control attack probability for a given beta.

    The quadratic f has f(0) = p0*B >= 0 and f(1) = p0 - 1 <= 0, so exactly
    one root lies in [0, 1] whenever it is not linear; that root is the one
    continuous with p_u = p0 at beta = 0.
    """
    pi_p = 1.0 - pi_d
    if beta == 0 or pi_p == 0:
        return p0
    a, b, c = beta_quadratic(p0, pi_p, beta)
    roots = _stable_quadratic_roots(a, b, c)
    tol = 1e-12
    inside = [r for r in roots if -tol <= r <= 1 + tol]
    if not inside:
        raise NumericalError(f"no root in [0, 1] for beta={beta!r} (roots {roots})")
    if len(inside) > 1 and abs(inside[0] - inside[1]) > tol:
        log.warning("two roots in [0, 1] for beta=%r: %r; taking the one nearest p0", beta, inside)
    p_u = min(1.0, max(0.0, min(inside, key=lambda r: abs(r - p0))))
    _check_beta_solution(p0, pi_p, beta, p_u)
    return p_u


def _check_beta_solution(p0, pi_p, beta, p_u):
    gamma = (p0 - p_u * (1.0 - pi_p)) / pi_p
    B = math.exp(beta)
    denom = 1.0 + gamma * (B - 1.0)
    if denom == 0:
        raise NumericalError("degenerate back-substitution")
    resid = gamma * B / denom - p_u
    # relative tolerance for very large |beta|
    if abs(resid) > BACKSUB_TOL * max(1.0, abs(B)):
        raise NumericalError(f"back-substitution residual {resid:.3g} for beta={beta!r}")


def beta_adjust(study: InfectStudy, beta) -> InfectEffect:
    if not math.isfinite(beta):
        raise ValidationError("beta must be finite")
    pi_d, _ = _fractions(study)
    return InfectEffect(study.p1, p_u_from_beta(study.p0, pi_d, beta))


# -- converters between parameterizations ------------------------------------

def theta_from_p_u(p0, p_u):
    return p_u - p0


def gamma_from_p_u(p0, pi_d, p_u):
    pi_p = 1.0 - pi_d
    if pi_p == 0:
        raise ValidationError("gamma is undefined without a protected stratum")
    return (p0 - p_u * pi_d) / pi_p


def beta_from_gamma(p_u, gamma):
    """log{odds(p_u) / odds(gamma)}; requires both strictly inside (0, 1)."""
    if not (0 < p_u < 1 and 0 < gamma < 1):
        raise ValidationError("beta needs p_u and gamma strictly inside (0, 1)")
    return math.log(p_u / (1 - p_u)) - math.log(gamma / (1 - gamma))


# -- bounds and sweeps -------------------------------------------------------

@dataclass(frozen=True)
class Bound:
    value: float
    gamma: float


def monotonicity_bounds(study: InfectStudy):
    """Lower and upper values of each scale over the admissible gamma range.

    Returns ``{scale: (Bound, Bound)}`` plus the two endpoint effects under
    ``"effects"``.  Scales undefined at an endpoint are ``None``.
    """
    rng = gamma_range(study)
    if rng is None:
        eff = InfectEffect(study.p1, study.p0)
        endpoints = ((float("nan"), eff), (float("nan"), eff))
    else:
        endpoints = tuple((gm, gamma_adjust(study, gm)) for gm in rng)
    out = {"effects": endpoints}
    for scale in ("rd", "rr", "or_", "efficacy"):
        vals = [(eff.scales()[scale], gm) for gm, eff in endpoints]
        if any(v is None for v, _ in vals):
            out[scale] = None
            continue
        lo, hi = sorted(vals, key=lambda t: t[0])
        out[scale] = (Bound(*lo), Bound(*hi))
    return out


@dataclass(frozen=True)
class SensitivitySpec:
    kind: str
    grid: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown sensitivity kind {self.kind!r}")
        if not self.grid:
            raise ValidationError("empty grid")


@dataclass(frozen=True)
class SweepRow:
    kind: str
    param: float
    effect: InfectEffect | None
    in_range: bool
    reason: str = ""


_ADJUST = {"theta": theta_adjust, "gamma": gamma_adjust, "beta": beta_adjust}


def sweep(study: InfectStudy, spec: SensitivitySpec):
    """Evaluate an adjuster over a grid; out-of-range points become skipped rows."""
    rows = []
    for value in spec.grid:
        try:
            eff = _ADJUST[spec.kind](study, value)
        except (RangeError, NumericalError) as exc:
            rows.append(SweepRow(spec.kind, value, None, False, str(exc)))
        else:
            rows.append(SweepRow(spec.kind, value, eff, True))
    return rows

