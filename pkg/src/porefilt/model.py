"""Core types and pointwise operations for the pore-scale filtration model.

Everything here is nondimensional.  A membrane is modelled as a bundle of
identical axisymmetric pores of unit length; ``a(x, t)`` is the pore radius
at depth ``x in [0, 1]``, scaled so the widest admissible radius is 1.  The
feed carries one or more particle species; species ``i`` deposits on the
pore wall at a rate proportional to ``lambda_i`` and shrinks the radius at
a rate weighted by ``beta_i`` (species 1 is the reference, ``beta_1 = 1``).

Two driving modes are supported downstream:

* constant pressure: the flux through the pore is ``u = 1 / int(a^-4 dx)``,
* constant flux: ``u = 1`` and the inlet pressure is ``p0 = int(a^-4 dx)``.

In both cases a steady advection--deposition balance along the pore gives an
exponential concentration profile,

    c_i(x) = c_i(0) * exp( -(pi * lambda_i / (4 u)) * int_0^x a dx' ),

which this module evaluates by cumulative trapezoidal quadrature.  All
functions are pure: profiles are never mutated, evolution happens in the
simulator by building new arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateFlowError,
    GridMismatchError,
    InvalidParameterError,
    InvalidShapeError,
    PoreClosedError,
)

__all__ = [
    "FLUX_FRACTION",
    "REMOVAL_TARGET",
    "SECONDARY_CEILING",
    "PRESSURE_INIT_MAX",
    "PRESSURE_RATIO_MAX",
    "RADIUS_FLOOR",
    "ShapeFunction",
    "ShapeCheck",
    "PoreProfile",
    "Species",
    "ScreeningParams",
    "FeedSpec",
    "eval_shape",
    "reversed_shape",
    "validate_shape",
    "flux_constant_pressure",
    "inlet_pressure_constant_flux",
    "concentration_profile",
    "screened_lambda",
    "deposition_rate",
]

# Protocol constants used throughout the package (dimensionless).
FLUX_FRACTION = 0.1       # a filter is spent once u <= FLUX_FRACTION * u_clean
REMOVAL_TARGET = 0.99     # required cumulative removal of species 1
SECONDARY_CEILING = 0.5   # admissible cumulative removal of the product species
PRESSURE_INIT_MAX = 100.0  # cap on p0(0) in constant-flux mode
PRESSURE_RATIO_MAX = 10.0  # cap on p0(t) / p0(0) in constant-flux mode
RADIUS_FLOOR = 1e-4        # radii are clamped here; at the floor a pore counts as closed

_SUM_TOL = 1e-12  # tolerance on sum(xi) == 1


@dataclass(frozen=True)
class ShapeFunction:
    """Polynomial initial pore radius ``a0(x) = sum_k d_k x^k``.

    ``coefficients`` is ordered ``(d0, d1, ..., dp)``.  The admissible set is
    ``0 < a0(x) <= 1`` on ``[0, 1]``; use :func:`validate_shape` to test it.
    """

    coefficients: tuple[float, ...]

    def __post_init__(self):
        if len(self.coefficients) == 0:
            raise InvalidShapeError("shape needs at least one coefficient")
        # +0.0 folds negative zero (a bounds-clipping artifact) into plain zero
        # so reports and output files never print "-0".
        coeffs = tuple(float(c) + 0.0 for c in self.coefficients)
        if not all(math.isfinite(c) for c in coeffs):
            raise InvalidShapeError(f"non-finite shape coefficients: {coeffs}")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, x):
        return eval_shape(self, x)


def eval_shape(shape: ShapeFunction, x) -> np.ndarray:
    """Evaluate ``a0(x)`` at scalar or array ``x`` (Horner scheme)."""
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, shape.coefficients[-1])
    for c in shape.coefficients[-2::-1]:
        out = out * x + c
    return out


def reversed_shape(shape: ShapeFunction) -> ShapeFunction:
    """The same profile traversed from the other face: q(x) = a0(1 - x).

    Both the flux integral of a^-4 and the transport integral of a are
    invariant under this reversal, so a profile and its reversal share every
    t = 0 quantity; objectives built from those alone cannot tell them apart.
    """
    coeffs = shape.coefficients
    out = [0.0] * len(coeffs)
    for j, cj in enumerate(coeffs):
        for k in range(j + 1):
            out[k] += cj * math.comb(j, k) * (-1.0) ** k
    return ShapeFunction(tuple(out))


@dataclass(frozen=True)
class ShapeCheck:
    """Result of :func:`validate_shape`."""

    feasible: bool
    min_radius: float
    max_radius: float
    min_x: float      # where the minimum is attained
    max_x: float      # where the maximum is attained
    violation: float  # total magnitude by which (0, 1] is exceeded; 0 when feasible


def validate_shape(shape: ShapeFunction, n_samples: int = 1025) -> ShapeCheck:
    """Check ``0 < a0(x) <= 1`` on ``[0, 1]``.

    For degree <= 2 the extrema are located analytically, so the verdict is
    exact; higher degrees are sampled on a dense uniform grid (the optimizer
    only exposes higher degrees as an opt-in, so this is a pragmatic check,
    not a proof).
    """
    if shape.degree <= 2:
        xs = np.array([0.0, 1.0])
        if shape.degree == 2 and shape.coefficients[2] != 0.0:
            d1, d2 = shape.coefficients[1], shape.coefficients[2]
            x_star = -d1 / (2.0 * d2)
            if 0.0 < x_star < 1.0:
                xs = np.array([0.0, x_star, 1.0])
    else:
        xs = np.linspace(0.0, 1.0, n_samples)
    values = eval_shape(shape, xs)
    i_lo = int(values.argmin())
    i_hi = int(values.argmax())
    lo = float(values[i_lo])
    hi = float(values[i_hi])
    violation = max(0.0, -lo) + max(0.0, hi - 1.0)
    feasible = lo > 0.0 and hi <= 1.0
    return ShapeCheck(
        feasible=feasible,
        min_radius=lo,
        max_radius=hi,
        min_x=float(xs[i_lo]),
        max_x=float(xs[i_hi]),
        violation=violation,
    )


@dataclass(frozen=True)
class PoreProfile:
    """Pore radius sampled on a uniform grid of ``n_x + 1`` nodes over [0, 1].

    Instances are value objects: the arrays are locked read-only so a profile
    captured from a simulation cannot be edited in place.
    """

    x: np.ndarray
    radii: np.ndarray
    floor: float = RADIUS_FLOOR

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        radii = np.ascontiguousarray(self.radii, dtype=float)
        if x.ndim != 1 or x.shape != radii.shape or x.size < 2:
            raise GridMismatchError(
                f"grid and radii must be matching 1-D arrays, got {x.shape} vs {radii.shape}"
            )
        if radii.min() < 0.0 or radii.max() > 1.0 + 1e-12:
            raise InvalidShapeError(
                f"pore radii must lie in [0, 1], got range "
                f"[{radii.min():.6g}, {radii.max():.6g}]"
            )
        x.setflags(write=False)
        radii.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "radii", radii)

    @classmethod
    def from_shape(cls, shape: ShapeFunction, n_x: int, floor: float = RADIUS_FLOOR) -> "PoreProfile":
        x = np.linspace(0.0, 1.0, n_x + 1)
        return cls(x=x, radii=eval_shape(shape, x), floor=floor)

    @property
    def n_x(self) -> int:
        return self.x.size - 1

    @property
    def closed(self) -> bool:
        """True once any radius has been clamped to the closure floor."""
        return bool(np.any(self.radii <= self.floor))


@dataclass(frozen=True)
class Species:
    """One particle species in the feed.

    xi    -- feed volume fraction, in (0, 1]; fractions sum to 1 over the feed
    lam   -- deposition/decay coefficient lambda (>= 0; 0 is the inert limit)
    beta  -- radius-shrinkage weight relative to species 1 (beta_1 = 1)
    """

    xi: float
    lam: float
    beta: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.xi <= 1.0):
            raise InvalidParameterError(f"species fraction xi must be in (0, 1], got {self.xi}")
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise InvalidParameterError(f"species lambda must be finite and >= 0, got {self.lam}")
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise InvalidParameterError(f"species beta must be finite and > 0, got {self.beta}")


@dataclass(frozen=True)
class ScreeningParams:
    """Exponential screening of the deposition coefficient by deposit depth.

    As the wall coats over, fresh particles see deposit rather than clean
    membrane, so the effective coefficient relaxes from ``lambda_clean``
    toward ``lambda_fouled`` over a depth scale ``h0``:

        lambda_eff(h) = lambda_fouled + (lambda_clean - lambda_fouled) * exp(-h / h0)
    """

    lambda_clean: float
    lambda_fouled: float
    h0: float

    def __post_init__(self):
        if not (self.lambda_clean > 0.0):
            raise InvalidParameterError(f"lambda_clean must be > 0, got {self.lambda_clean}")
        if not (self.lambda_fouled >= 0.0):
            raise InvalidParameterError(f"lambda_fouled must be >= 0, got {self.lambda_fouled}")
        if not (self.h0 > 0.0):
            raise InvalidParameterError(f"screening depth h0 must be > 0, got {self.h0}")


def screened_lambda(params: ScreeningParams, h):
    """Effective deposition coefficient at deposit thickness ``h`` (scalar or array)."""
    if params.h0 <= 0.0:  # defensive; construction already rejects this
        raise InvalidParameterError(f"screening depth h0 must be > 0, got {params.h0}")
    h = np.asarray(h, dtype=float)
    out = params.lambda_fouled + (params.lambda_clean - params.lambda_fouled) * np.exp(-h / params.h0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FeedSpec:
    """Composition of the feed suspension.

    ``species`` is ordered; species 1 (index 0) is the reference whose removal
    is constrained, species 2 (index 1) is the conventional product species.
    ``screening`` is optional and per-species (``None`` entries leave that
    species' lambda constant).
    """

    species: tuple[Species, ...]
    screening: tuple[ScreeningParams | None, ...] | None = None

    def __post_init__(self):
        species = tuple(self.species)
        if len(species) < 1:
            raise InvalidParameterError("feed needs at least one species")
        total = math.fsum(s.xi for s in species)
        if abs(total - 1.0) > _SUM_TOL:
            raise InvalidParameterError(f"species fractions must sum to 1 (got {total!r})")
        if abs(species[0].beta - 1.0) > _SUM_TOL:
            raise InvalidParameterError(
                f"species 1 is the shrinkage reference and must have beta = 1, got {species[0].beta}"
            )
        object.__setattr__(self, "species", species)
        if self.screening is not None:
            screening = tuple(self.screening)
            if len(screening) != len(species):
                raise InvalidParameterError(
                    f"screening list must align with species ({len(screening)} != {len(species)})"
                )
            for sp, scr in zip(species, screening):
                if scr is not None and abs(scr.lambda_clean - sp.lam) > _SUM_TOL:
                    raise InvalidParameterError(
                        "screening lambda_clean must equal the species lambda "
                        f"({scr.lambda_clean} != {sp.lam})"
                    )
            object.__setattr__(self, "screening", screening)

    @classmethod
    def from_fractions(
        cls,
        xi: Sequence[float],
        beta: Sequence[float],
        lam1: float = 1.0,
        lam: Sequence[float] | None = None,
        screening: Sequence[ScreeningParams | None] | None = None,
    ) -> "FeedSpec":
        """Build a feed from fractions and shrinkage weights.

        By default every species' deposition coefficient is coupled to the
        reference one, ``lambda_i = beta_i * lam1`` (equal particle-material
        densities); pass ``lam`` explicitly to override the coupling.
        """
        if len(beta) != len(xi):
            raise InvalidParameterError("xi and beta must have the same length")
        if lam is None:
            lam = [b * lam1 for b in beta]
        elif len(lam) != len(xi):
            raise InvalidParameterError("lam and xi must have the same length")
        species = tuple(Species(xi=x, lam=l, beta=b) for x, l, b in zip(xi, lam, beta))
        return cls(species=species, screening=tuple(screening) if screening is not None else None)

    @classmethod
    def two_species(cls, xi: float, beta: float, lam1: float = 1.0) -> "FeedSpec":
        """The standard binary feed: fractions (xi, 1 - xi), weights (1, beta)."""
        return cls.from_fractions([xi, 1.0 - xi], [1.0, beta], lam1=lam1)

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def fractions(self) -> np.ndarray:
        return np.array([s.xi for s in self.species])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([s.lam for s in self.species])

    @property
    def betas(self) -> np.ndarray:
        return np.array([s.beta for s in self.species])

    @property
    def has_screening(self) -> bool:
        return self.screening is not None and any(s is not None for s in self.screening)


def _cumtrapz(values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cumulative trapezoidal integral with a leading zero."""
    out = np.empty_like(values)
    out[0] = 0.0
    np.cumsum((values[1:] + values[:-1]) * 0.5 * np.diff(x), out=out[1:])
    return out


def flux_constant_pressure(profile: PoreProfile) -> float:
    """Flux through the pore under unit driving pressure, ``u = 1 / int(a^-4 dx)``."""
    if profile.closed:
        raise PoreClosedError("flux undefined: a pore radius sits at the closure floor")
    resistance = float(np.trapezoid(profile.radii ** -4.0, profile.x))
    return 1.0 / resistance


def inlet_pressure_constant_flux(profile: PoreProfile) -> float:
    """Inlet pressure needed to drive unit flux, ``p0 = int(a^-4 dx)``."""
    if profile.closed:
        raise PoreClosedError("pressure undefined: a pore radius sits at the closure floor")
    return float(np.trapezoid(profile.radii ** -4.0, profile.x))


def concentration_profile(
    profile: PoreProfile,
    feed: FeedSpec,
    u: float,
    inlet_conc: Sequence[float] | None = None,
    deposit: np.ndarray | None = None,
) -> np.ndarray:
    """Per-species concentration along the pore, shape ``(S, n_x + 1)``.

    ``u`` is the current flux (pass 1.0 in constant-flux mode).  ``inlet_conc``
    defaults to the feed fractions; multi-stage passes feed a batch's own
    concentrations instead.  ``deposit`` is the deposit-thickness field
    ``h(x) = a(x, 0) - a(x, t)`` and is only consulted when the feed screens.
    """
    if not (u > 0.0) or not math.isfinite(u):
        raise DegenerateFlowError(f"transport needs a positive finite flux, got {u}")
    a = profile.radii
    if inlet_conc is None:
        c0 = feed.fractions
    else:
        c0 = np.asarray(inlet_conc, dtype=float)
        if c0.shape != (feed.n_species,):
            raise GridMismatchError(
                f"inlet concentrations must have one entry per species, got {c0.shape}"
            )
    scale = math.pi / (4.0 * u)
    out = np.empty((feed.n_species, a.size))
    if feed.has_screening:
        if deposit is None:
            deposit = np.zeros_like(a)
        elif deposit.shape != a.shape:
            raise GridMismatchError("deposit thickness must live on the profile grid")
        for i, sp in enumerate(feed.species):
            scr = feed.screening[i] if feed.screening is not None else None
            lam_eff = screened_lambda(scr, deposit) if scr is not None else sp.lam
            out[i] = c0[i] * np.exp(-scale * _cumtrapz(lam_eff * a, profile.x))
    else:
        cum_a = _cumtrapz(a, profile.x)
        for i, sp in enumerate(feed.species):
            out[i] = c0[i] * np.exp(-scale * sp.lam * cum_a)
    return out


def deposition_rate(profile: PoreProfile, concentrations: np.ndarray, feed: FeedSpec) -> np.ndarray:
    """Rate of radius change ``da/dt = -sum_i beta_i c_i(x)`` at every node.

    beta_i is a ratio of wall-deposition coefficients, each proportional to
    the same attraction coefficient that drives capture; a species with
    lam == 0 is never captured and therefore deposits nothing, whatever its
    nominal beta.  (With every lam > 0 -- the usual case -- this is exactly
    -sum_i beta_i c_i.)
    """
    conc = np.asarray(concentrations, dtype=float)
    if conc.shape != (feed.n_species, profile.x.size):
        raise GridMismatchError(
            f"concentrations must have shape (S, n_x + 1) = "
            f"({feed.n_species}, {profile.x.size}), got {conc.shape}"
        )
    betas = feed.betas * (feed.lambdas > 0.0)
    return -(betas @ conc)
