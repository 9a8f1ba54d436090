"""Collocation sets: interior points, boundary points, initial points.

The interior set is a Cartesian product of independently drawn per-axis
coordinates.  Initial points are densified near the starting interface.
Boundary points carry Dirichlet targets or a zero-normal-flux flag.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .physics import (NondimParams, PhysicalParams, Scenario, face_axis,
                      face_names, face_side, initial_c, initial_phi,
                      signed_interface_distance)


@dataclasses.dataclass(frozen=True)
class SamplingConfig:
    general_counts: tuple[int, ...] = (40, 20, 30)  # per axis, time last
    n_b: int = 500
    n_i: int = 800
    band_fraction: float = 0.5       # share of initial points near the interface
    band_halfwidth_ell: float = 1.5  # band half-width in interface thicknesses

    def __post_init__(self):
        if any(c < 1 for c in self.general_counts) or self.n_b < 1 or self.n_i < 1:
            raise ValueError("all sampling counts must be positive")
        if not 0.0 <= self.band_fraction <= 1.0:
            raise ValueError("band_fraction must lie in [0, 1]")


@dataclasses.dataclass
class CollocationSet:
    general: np.ndarray            # (n_g, dim+1)
    boundary_points: np.ndarray    # (n_b, dim+1)
    boundary_faces: tuple[str, ...]
    boundary_is_flux: np.ndarray   # (n_b,) bool
    boundary_targets: np.ndarray   # (n_b, 2) phi/c targets, nan on flux rows
    boundary_normal_axis: np.ndarray  # (n_b,) int
    initial_points: np.ndarray     # (n_i, dim)
    initial_targets: np.ndarray    # (n_i, 2)
    epoch_created: int = 0


def sample_general(scenario: Scenario, per_axis_counts, rng) -> np.ndarray:
    """Cartesian product of per-axis uniform draws over space and time."""
    per_axis_counts = tuple(int(c) for c in per_axis_counts)
    if len(per_axis_counts) != scenario.dim + 1:
        raise ValueError("need one count per spatial axis plus one for time")
    axes = [rng.uniform(scenario.space_lo[j], scenario.space_hi[j],
                        size=per_axis_counts[j])
            for j in range(scenario.dim)]
    axes.append(rng.uniform(0.0, scenario.t_end, size=per_axis_counts[-1]))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def sample_boundary(scenario: Scenario, n_b: int, rng,
                    phys: PhysicalParams, nondim: NondimParams):
    """Boundary points over the full time range with targets or flux flags.

    Points are allocated to faces in proportion to face measure.  Dirichlet
    rows carry (phi, c) targets; flux rows carry nan targets plus the normal
    axis index.  On a solid face with pit mouths, points inside a mouth pin
    the liquid reservoir (0, 0) and points on the surrounding surface become
    flux rows, mirroring the reference-solver boundary treatment.
    """
    faces = face_names(scenario.dim)
    extents = scenario.extents
    measures = np.array([np.prod([e for j, e in enumerate(extents)
                                  if j != face_axis(f)])
                         for f in faces], dtype=np.float64)
    raw = n_b * measures / measures.sum()
    counts = np.floor(raw).astype(int)
    remainder = raw - counts
    for idx in np.argsort(-remainder)[: n_b - counts.sum()]:
        counts[idx] += 1

    pts, face_of, is_flux, targets, normal = [], [], [], [], []
    for f, cnt in zip(faces, counts):
        if cnt == 0:
            continue
        ax = face_axis(f)
        block = np.empty((cnt, scenario.dim + 1))
        for j in range(scenario.dim):
            if j == ax:
                block[:, j] = (scenario.space_lo[j] if face_side(f) < 0
                               else scenario.space_hi[j])
            else:
                block[:, j] = rng.uniform(scenario.space_lo[j],
                                          scenario.space_hi[j], size=cnt)
        block[:, -1] = rng.uniform(0.0, scenario.t_end, size=cnt)
        pts.append(block)
        face_of.extend([f] * cnt)
        normal.extend([ax] * cnt)
        if f in scenario.flux_free_faces:
            is_flux.extend([True] * cnt)
            targets.append(np.full((cnt, 2), np.nan))
            continue
        if f in scenario.liquid_boundary_faces:
            is_flux.extend([False] * cnt)
            targets.append(np.zeros((cnt, 2)))
            continue
        sd = signed_interface_distance(block[:, :scenario.dim], scenario)
        mouth = sd >= 0.0
        tgt = np.full((cnt, 2), np.nan)
        if mouth.any():
            tgt[mouth] = 0.0
            is_flux.extend(list(~mouth))
        else:
            # pit-free solid face: pin the initial profile trace
            tgt[:, 0] = initial_phi(sd, phys, nondim.l_c)
            tgt[:, 1] = initial_c(sd, phys, nondim.l_c)
            is_flux.extend([False] * cnt)
        targets.append(tgt)
    return (np.concatenate(pts), tuple(face_of),
            np.asarray(is_flux, dtype=bool), np.concatenate(targets),
            np.asarray(normal, dtype=int))


def sample_initial(scenario: Scenario, n_i: int, rng,
                   phys: PhysicalParams, nondim: NondimParams,
                   band_fraction: float = 0.5,
                   band_halfwidth_ell: float = 1.5):
    """Initial points with diffuse-profile targets, densified at the interface.

    A configurable share is drawn inside a band around the starting
    interface by rejection; scenarios with no pits degenerate to plain
    uniform sampling.
    """
    lo = np.asarray(scenario.space_lo)
    hi = np.asarray(scenario.space_hi)
    n_band = int(round(n_i * band_fraction)) if scenario.pits else 0
    band = band_halfwidth_ell * phys.ell / nondim.l_c

    kept = []
    have = 0
    attempts = 0
    while have < n_band and attempts < 10_000:
        cand = rng.uniform(lo, hi, size=(max(4 * n_band, 64), scenario.dim))
        sd = signed_interface_distance(cand, scenario)
        sel = cand[np.abs(sd) <= band]
        kept.append(sel[: n_band - have])
        have += len(kept[-1])
        attempts += 1
    band_pts = (np.concatenate(kept) if kept
                else np.empty((0, scenario.dim)))
    uniform_pts = rng.uniform(lo, hi, size=(n_i - len(band_pts), scenario.dim))
    points = np.concatenate([band_pts, uniform_pts])
    sd = signed_interface_distance(points, scenario)
    targets = np.stack([initial_phi(sd, phys, nondim.l_c),
                        initial_c(sd, phys, nondim.l_c)], axis=1)
    return points, targets


def should_resample(step: int, s_s: int) -> bool:
    """True exactly at the start of every two-stage window."""
    if s_s < 1:
        raise ValueError("s_s must be at least 1")
    return step % (2 * s_s) == 0


def build_collocation(scenario: Scenario, cfg: SamplingConfig, rng,
                      phys: PhysicalParams, nondim: NondimParams,
                      epoch: int = 0) -> CollocationSet:
    general = sample_general(scenario, cfg.general_counts, rng)
    b_pts, b_faces, b_flux, b_targets, b_normal = sample_boundary(
        scenario, cfg.n_b, rng, phys, nondim)
    i_pts, i_targets = sample_initial(scenario, cfg.n_i, rng, phys, nondim,
                                      cfg.band_fraction, cfg.band_halfwidth_ell)
    return CollocationSet(general, b_pts, b_faces, b_flux, b_targets,
                          b_normal, i_pts, i_targets, epoch_created=epoch)


def dump_collocation(colloc: CollocationSet, path) -> None:
    """Plain-text dump for inspection: kind, coordinates, then targets."""
    with open(path, "w") as fh:
        for row in colloc.general:
            fh.write("general\t" + "\t".join(f"{v:.17g}" for v in row) + "\n")
        for row, flx, tgt in zip(colloc.boundary_points, colloc.boundary_is_flux,
                                 colloc.boundary_targets):
            kind = "boundary-flux" if flx else "boundary"
            fh.write(kind + "\t" + "\t".join(f"{v:.17g}" for v in row))
            if not flx:
                fh.write("\t" + "\t".join(f"{v:.17g}" for v in tgt))
            fh.write("\n")
        for row, tgt in zip(colloc.initial_points, colloc.initial_targets):
            fh.write("initial\t" + "\t".join(f"{v:.17g}" for v in row)
                     + "\t" + "\t".join(f"{v:.17g}" for v in tgt) + "\n")
