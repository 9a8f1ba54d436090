"""Coupled Allen-Cahn / Cahn-Hilliard corrosion model.

Constants, non-dimensional groups, interpolation and double-well functions,
PDE residuals, diffuse initial profiles, and pit geometry.  Every function
here is polymorphic over plain arrays, tape variables, and jets, so the same
formulas serve the network losses and the finite-difference solver.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np


class NonPositiveScale(ValueError):
    """A characteristic scale must be strictly positive."""


@dataclasses.dataclass(frozen=True)
class PhysicalParams:
    """SI material constants for the stainless-steel pitting system."""

    alpha_phi: float = 1.03e-4    # gradient energy coefficient [J/m]
    w_phi: float = 1.76e7         # double-well barrier height [J/m^3]
    ell: float = 1.0e-5           # interface thickness [m]
    L_mob: float = 2.0            # interface kinetics parameter [m^3/(J s)]
    M_diff: float = 7.94e-18      # diffusion mobility [m^5/(J s)]
    curvature_A: float = 5.35e7   # free-energy curvature [J/m^3]
    c_se: float = 1.0             # solid equilibrium concentration (normalized)
    c_le: float = 0.036           # liquid equilibrium concentration (normalized)

    def __post_init__(self):
        for name in ("alpha_phi", "w_phi", "ell", "L_mob", "M_diff",
                     "curvature_A", "c_se", "c_le"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if not (0.0 < self.c_le < self.c_se <= 1.0):
            raise ValueError("require 0 < c_le < c_se <= 1")

    @property
    def profile_steepness(self) -> float:
        # sqrt(w_phi / (2 alpha_phi)), reciprocal interface width [1/m]
        return math.sqrt(self.w_phi / (2.0 * self.alpha_phi))


@dataclasses.dataclass(frozen=True)
class NondimParams:
    """Dimensionless groups of the rescaled system."""

    n_ch: float
    n_ac1: float
    n_ac2: float
    n_ac3: float
    c_se: float
    c_le: float
    l_c: float   # characteristic length [m]
    t_c: float   # characteristic time [s]

    def __post_init__(self):
        for name in ("n_ch", "n_ac1", "n_ac2", "n_ac3"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")


def nondimensionalize(params: PhysicalParams, l_c: float, t_c: float) -> NondimParams:
    """Collapse the SI constants into the four dimensionless PDE groups."""
    if l_c <= 0.0 or t_c <= 0.0:
        raise NonPositiveScale("l_c and t_c must be strictly positive")
    two_a = 2.0 * params.curvature_A
    return NondimParams(
        n_ch=two_a * params.M_diff * t_c / l_c ** 2,
        n_ac1=two_a * params.L_mob * t_c,
        n_ac2=params.L_mob * params.w_phi * t_c,
        n_ac3=params.L_mob * params.alpha_phi * t_c / l_c ** 2,
        c_se=params.c_se,
        c_le=params.c_le,
        l_c=l_c,
        t_c=t_c,
    )


# ---------------------------------------------------------------------------
# Interpolation and double-well functions.
# ---------------------------------------------------------------------------

def interp_h(phi):
    """Phase interpolation -2 phi^3 + 3 phi^2, monotone on [0, 1]."""
    return phi * phi * (3.0 - 2.0 * phi)


def interp_h_prime(phi):
    """d/dphi of interp_h: -6 phi^2 + 6 phi."""
    return 6.0 * phi * (1.0 - phi)


def interp_h_second(phi):
    """Second derivative of interp_h: 6 - 12 phi."""
    return 6.0 - 12.0 * phi


def well_g(phi):
    """Double-well potential phi^2 (1 - phi)^2."""
    w = phi * (1.0 - phi)
    return w * w


def well_g_prime(phi):
    """d/dphi of well_g: 2 phi (1 - phi)(1 - 2 phi)."""
    return 2.0 * phi * (1.0 - phi) * (1.0 - 2.0 * phi)


def well_g_second(phi):
    """Second derivative of well_g: 2 - 12 phi + 12 phi^2."""
    return 2.0 - 12.0 * phi + 12.0 * phi * phi


# ---------------------------------------------------------------------------
# PDE residuals in non-dimensional form.
# ---------------------------------------------------------------------------

def residual_ch(c_t, lap_c, lap_h_of_phi, p: NondimParams):
    """Cahn-Hilliard residual: c_t - n_ch lap(c) + n_ch (c_se - c_le) lap(h)."""
    return c_t - p.n_ch * lap_c + (p.n_ch * (p.c_se - p.c_le)) * lap_h_of_phi


def residual_ac(phi_t, phi, c, lap_phi, p: NondimParams):
    """Allen-Cahn residual; vanishes identically at both pure-phase states."""
    dce = p.c_se - p.c_le
    bracket = c - interp_h(phi) * dce - p.c_le
    return (phi_t
            - p.n_ac1 * dce * bracket * interp_h_prime(phi)
            + p.n_ac2 * well_g_prime(phi)
            - p.n_ac3 * lap_phi)


# ---------------------------------------------------------------------------
# Diffuse initial profiles and pit geometry.
# ---------------------------------------------------------------------------

def initial_phi(x_d, params: PhysicalParams, l_c: float = 1.0):
    """Diffuse phase profile across the initial interface.

    ``x_d`` is the signed distance to the interface, positive on the liquid
    side.  With the default ``l_c`` the distance is taken in meters; pass the
    characteristic length to feed non-dimensional distances instead.
    """
    k = params.profile_steepness
    return 0.5 * (1.0 - np.tanh(k * (np.asarray(x_d, dtype=np.float64) * l_c)))


def initial_c(x_d, params: PhysicalParams, l_c: float = 1.0):
    """Initially diffused concentration: h(phi0) * c_se."""
    return interp_h(initial_phi(x_d, params, l_c)) * params.c_se


# ---------------------------------------------------------------------------
# Scenario geometry.
# ---------------------------------------------------------------------------

_FACE_NAMES = {1: ("xmin", "xmax"),
               2: ("xmin", "xmax", "ymin", "ymax"),
               3: ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")}


def face_names(dim: int) -> tuple[str, ...]:
    return _FACE_NAMES[dim]


def face_axis(face: str) -> int:
    return {"x": 0, "y": 1, "z": 2}[face[0]]


def face_side(face: str) -> int:
    """-1 for a low face, +1 for a high face."""
    return -1 if face.endswith("min") else 1


@dataclasses.dataclass(frozen=True)
class Scenario:
    """One benchmark geometry in non-dimensional coordinates.

    Pit centers sit on the domain face they are seeded on; the three face
    sets partition the boundary into solid, liquid, and zero-flux pieces.
    Liquid faces pin (0, 0).  A solid face with pit mouths pins (0, 0) over
    the mouths and leaves the rest flux-free so the pits can widen; a solid
    face without mouths pins the initial diffuse profile, which is (1, 1)
    away from any pit.
    """

    space_lo: tuple[float, ...]
    space_hi: tuple[float, ...]
    dim: int
    t_end: float
    pits: tuple[tuple[tuple[float, ...], float], ...]
    solid_boundary_faces: frozenset[str]
    liquid_boundary_faces: frozenset[str]
    flux_free_faces: frozenset[str]
    name: str = "custom"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if len(self.space_lo) != self.dim or len(self.space_hi) != self.dim:
            raise ValueError("bounds must match dim")
        if any(hi <= lo for lo, hi in zip(self.space_lo, self.space_hi)):
            raise ValueError("space_hi must exceed space_lo on every axis")
        if self.t_end < 0.0:
            raise ValueError("t_end must be non-negative")
        names = set(face_names(self.dim))
        sets = (set(self.solid_boundary_faces), set(self.liquid_boundary_faces),
                set(self.flux_free_faces))
        if sets[0] | sets[1] | sets[2] != names or \
                len(sets[0]) + len(sets[1]) + len(sets[2]) != len(names):
            raise ValueError("face sets must partition the boundary")
        for center, radius in self.pits:
            if radius <= 0.0:
                raise ValueError("pit radius must be positive")
            if len(center) != self.dim:
                raise ValueError("pit center must match dim")
            on_face = any(
                math.isclose(center[face_axis(f)],
                             self.space_lo[face_axis(f)] if face_side(f) < 0
                             else self.space_hi[face_axis(f)],
                             rel_tol=0.0, abs_tol=1e-12)
                for f in names)
            if not on_face:
                raise ValueError(f"pit center {center} lies on no boundary face")

    @property
    def extents(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in zip(self.space_lo, self.space_hi))


def signed_interface_distance(point: Sequence[float], scenario: Scenario):
    """Signed distance to the initial interface, positive inside a pit.

    Defined as the max over pits of (radius - distance to center).  Without
    pits the whole domain is solid and a large negative distance is returned.
    """
    pt = np.asarray(point, dtype=np.float64)
    if not scenario.pits:
        far = -float(np.linalg.norm(np.asarray(scenario.extents)))
        return far if pt.ndim < 2 else np.full(pt.shape[:-1], far)
    best = None
    for center, radius in scenario.pits:
        d = radius - np.linalg.norm(pt - np.asarray(center, dtype=np.float64),
                                    axis=-1)
        best = d if best is None else np.maximum(best, d)
    return best
