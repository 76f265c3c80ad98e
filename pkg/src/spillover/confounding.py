"""Bias-formula sensitivity analysis for unmeasured confounding.

The observed contrast ``E[Y|z,g,l,h] - E[Y|z',g',l,h]`` differs from the
causal contrast ``E[Y(z,g)|l,h] - E[Y(z',g')|l,h]`` by a bias ``B``.  With an
own-level confounder ``U`` and a summary ``V`` of the other members'
confounders, ``B`` can be computed either from a full specification over a
finite (u, v) support (:func:`bias_general`) or, when the confounders act
additively, from two effect sizes and two mean differences
(:func:`bias_simple`).  Everything here is for one covariate stratum (l, h).
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError

NORM_TOL = 1e-12


class SharpNullWarning(UserWarning):
    """The outcome shift of (U, V) differs between the two exposure pairs."""


@dataclass(frozen=True)
class BiasSpecGeneral:
    """Full specification over a finite support of (u, v) points.

    ``shift(z, g, u, v)`` is ``E(Y|z,g,l,h,u,v) - E(Y|z,g,l,h,u*,v*)`` and must
    vanish at the reference point.  ``dist_at(z, g)`` returns the probabilities
    ``P(u,v|z,g,l,h)`` aligned with ``support``; ``dist_marg`` holds
    ``P(u,v|l,h)``.
    """

    support: tuple[tuple[float, float], ...]
    shift: Callable[[float, float, float, float], float]
    dist_at: Callable[[float, float], Sequence[float]]
    dist_marg: Sequence[float]
    reference: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(tuple(map(float, p)) for p in self.support))
        object.__setattr__(self, "reference", tuple(map(float, self.reference)))
        object.__setattr__(self, "dist_marg", _check_dist(self.dist_marg, len(self.support), "P(u,v|l,h)"))
        if self.reference not in self.support:
            raise ValidationError(f"reference {self.reference} is not in the support")

    def with_reference(self, reference):
        """Same outcome model expressed relative to another reference point."""
        ref = tuple(map(float, reference))
        old = self.shift

        def shift(z, g, u, v):
            return old(z, g, u, v) - old(z, g, *ref)

        return replace(self, shift=shift, reference=ref)


@dataclass(frozen=True)
class BiasSpecSimple:
    """Additive confounding: ``lam`` per unit of U, ``tau`` per unit of V.

    ``du`` and ``dv`` are the differences in the means of U and V between the
    two exposure pairs, within the (l, h) stratum.
    """

    lam: float
    tau: float
    du: float
    dv: float

    def __post_init__(self):
        if not all(np.isfinite([self.lam, self.tau, self.du, self.dv])):
            raise ValidationError("bias parameters must be finite")


def _check_dist(p, n, name):
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise ValidationError(f"{name}: expected {n} probabilities, got shape {p.shape}")
    if (p < 0).any() or abs(p.sum() - 1.0) > NORM_TOL:
        raise ValidationError(f"{name}: not a probability distribution (sum {p.sum()!r})")
    return p


def bias_general(spec: BiasSpecGeneral, zg, zg_alt):
    """Bias ``B`` for the contrast of exposure pair ``zg`` versus ``zg_alt``.

    Sums, over the support, the confounder effect times the shift in the
    confounder distribution, for each exposure pair, and subtracts the second
    sum from the first.
    """
    n = len(spec.support)
    ref = spec.reference
    for z, g in (zg, zg_alt):
        r = spec.shift(z, g, *ref)
        if r != 0:
            raise ValidationError(f"shift({z}, {g}, reference) = {r!r}, must be 0")
    marg = spec.dist_marg
    terms = []
    for z, g in (zg, zg_alt):
        p = _check_dist(spec.dist_at(z, g), n, f"P(u,v|z={z},g={g})")
        s = np.array([spec.shift(z, g, u, v) for u, v in spec.support])
        terms.append(s)
        terms.append(p - marg)
    s1, d1, s2, d2 = terms
    if not np.allclose(s1, s2, rtol=0, atol=1e-12):
        warnings.warn(
            "the (U, V) outcome shift differs between the two exposure pairs; "
            "the corrected contrast may be incompatible with the sharp null",
            SharpNullWarning, stacklevel=2)
    return float(s1 @ d1 - s2 @ d2)


def bias_simple(spec: BiasSpecSimple):
    return spec.lam * spec.du + spec.tau * spec.dv


@dataclass(frozen=True)
class CorrectedEstimate:
    observed: float
    bias: float
    corrected: float
    ci_observed: tuple[float, float] | None = None
    ci_corrected: tuple[float, float] | None = None


def correct(observed, bias, ci=None, simple=True) -> CorrectedEstimate:
    """Subtract ``bias`` from an observed contrast and, for additive specs, its CI.

    With a general specification the bias depends on the stratum
    distributions of the confounders, so shifting the interval is refused.
    """
    if ci is not None and not simple:
        raise ValidationError(
            "interval shifting is only valid for the additive (simple) bias formula; "
            "the general bias depends on unknown confounder distributions")
    shifted = None if ci is None else (ci[0] - bias, ci[1] - bias)
    return CorrectedEstimate(observed, bias, observed - bias,
                             None if ci is None else tuple(ci), shifted)


@dataclass(frozen=True)
class BiasRow:
    spec: BiasSpecSimple
    estimate: CorrectedEstimate


def sweep_bias(observed, lams, taus, dus, dvs, ci=None):
    """Corrections over the Cartesian grid of (lam, tau, du, dv), in grid order."""
    rows = []
    for lam, tau, du, dv in itertools.product(lams, taus, dus, dvs):
        spec = BiasSpecSimple(lam, tau, du, dv)
        rows.append(BiasRow(spec, correct(observed, bias_simple(spec), ci)))
    return rows


def benchmark_from_covariate(design, y, own, others, contrast):
    """Bias parameters for a hypothetical confounder as strong as a measured one.

    ``design`` is the regression design without the benchmark covariate,
    ``own`` and ``others`` are the benchmark covariate for the individual and
    its summary over the other members, and ``contrast`` is the coefficient
    vector defining the observed contrast on ``design``.  ``lam`` and ``tau``
    are the benchmark's coefficients in the full regression; ``du`` and
    ``dv`` are the contrasts of its conditional means given the reduced design.

    Returns ``(spec, observed)`` where ``observed`` is the contrast from the
    reduced regression.  For linear least squares,
    ``observed - bias_simple(spec)`` equals the contrast from the full fit.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    c = np.asarray(contrast, dtype=float)
    full = np.column_stack([X, own, others])
    beta_full = np.linalg.lstsq(full, y, rcond=None)[0]
    beta_short = np.linalg.lstsq(X, y, rcond=None)[0]
    coef_u = np.linalg.lstsq(X, np.asarray(own, dtype=float), rcond=None)[0]
    coef_v = np.linalg.lstsq(X, np.asarray(others, dtype=float), rcond=None)[0]
    spec = BiasSpecSimple(lam=float(beta_full[-2]), tau=float(beta_full[-1]),
                          du=float(c @ coef_u), dv=float(c @ coef_v))
    return spec, float(c @ beta_short)
