"""Field snapshots, error norms, and snapshot export/import.

Snapshots are dense tensor-product grids of both fields at one time.
Errors are root-mean-square differences over grid nodes.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy import ndimage

from .network import NetworkParams, net_forward_batch


class GridMismatch(ValueError):
    """Two snapshots do not share a grid."""


@dataclasses.dataclass
class FieldSnapshot:
    time: float
    axes: tuple            # per-axis node coordinates
    phi: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        shape = tuple(len(a) for a in self.axes)
        if self.phi.shape != shape or self.c.shape != shape:
            raise GridMismatch("field shapes must match the axes")

    @property
    def dim(self) -> int:
        return len(self.axes)


def _check_same_grid(a: FieldSnapshot, b: FieldSnapshot) -> None:
    if a.dim != b.dim or a.phi.shape != b.phi.shape:
        raise GridMismatch("snapshot shapes differ")
    for ax_a, ax_b in zip(a.axes, b.axes):
        if not np.allclose(ax_a, ax_b, rtol=0.0, atol=1.0e-12):
            raise GridMismatch("snapshot axes differ")


def l2_error(a: FieldSnapshot, b: FieldSnapshot, field: str = "phi") -> float:
    """Root-mean-square nodal difference of one field."""
    _check_same_grid(a, b)
    fa = getattr(a, field)
    fb = getattr(b, field)
    return float(np.sqrt(np.mean((fa - fb) ** 2)))


@dataclasses.dataclass
class ErrorReport:
    per_time: list            # (time, rms) pairs
    max_rms: float
    t_of_max: float
    worst_point: tuple        # coordinates of the largest nodal deviation
    worst_abs: float
    time_avg_rms: float
    space_time_rms: float


def compare_snapshots(ours: list, reference: list,
                      field: str = "phi") -> ErrorReport:
    """Per-time and aggregate RMS errors between two snapshot series."""
    if len(ours) != len(reference):
        raise GridMismatch("snapshot series lengths differ")
    if not ours:
        raise ValueError("need at least one snapshot pair")
    per_time = []
    worst_abs = -1.0
    worst_point = ()
    sq_sum = 0.0
    n_total = 0
    for a, b in zip(ours, reference):
        if not math.isclose(a.time, b.time, rel_tol=0.0, abs_tol=1.0e-9):
            raise GridMismatch("snapshot times differ")
        rms = l2_error(a, b, field=field)
        per_time.append((a.time, rms))
        diff = np.abs(getattr(a, field) - getattr(b, field))
        idx = np.unravel_index(int(np.argmax(diff)), diff.shape)
        if float(diff[idx]) > worst_abs:
            worst_abs = float(diff[idx])
            worst_point = tuple(float(a.axes[j][idx[j]])
                                for j in range(a.dim)) + (a.time,)
        sq_sum += float(np.sum(diff ** 2))
        n_total += diff.size
    max_rms, t_of_max = max((r, t) for t, r in per_time)
    return ErrorReport(per_time=per_time, max_rms=max_rms, t_of_max=t_of_max,
                       worst_point=worst_point, worst_abs=worst_abs,
                       time_avg_rms=sum(r for _, r in per_time) / len(per_time),
                       space_time_rms=math.sqrt(sq_sum / n_total))


def default_eval_axes(scenario) -> tuple:
    """Shared evaluation grid: 201 nodes on the first axis in 2D, 41 in 3D,
    other axes scaled to keep the spacing uniform."""
    n0 = 201 if scenario.dim == 2 else 41
    base = scenario.space_hi[0] - scenario.space_lo[0]
    axes = []
    for j in range(scenario.dim):
        extent = scenario.space_hi[j] - scenario.space_lo[j]
        n = max(2, int(round((n0 - 1) * extent / base)) + 1)
        axes.append(np.linspace(scenario.space_lo[j], scenario.space_hi[j], n))
    return tuple(axes)


def evaluate_network_on_grid(params: NetworkParams, axes, time: float,
                             chunk: int = 4096) -> FieldSnapshot:
    """Evaluate the trained fields on a tensor grid at one time."""
    axes = tuple(np.asarray(a, dtype=np.float64) for a in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    n = len(pts)
    phi = np.empty(n)
    c = np.empty(n)
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        coords = [pts[s:e, j] for j in range(pts.shape[1])]
        coords.append(np.full(e - s, float(time)))
        p, cc = net_forward_batch(coords, params)
        phi[s:e] = p
        c[s:e] = cc
    shape = tuple(len(a) for a in axes)
    return FieldSnapshot(time=float(time), axes=axes,
                         phi=phi.reshape(shape), c=c.reshape(shape))


def export_snapshot(snap: FieldSnapshot, path, fmt: str = "csv") -> None:
    """Write one snapshot as CSV rows or a legacy VTK structured grid."""
    if fmt == "csv":
        _export_csv(snap, path)
    elif fmt == "vtk":
        _export_vtk(snap, path)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _export_csv(snap: FieldSnapshot, path) -> None:
    names = ["x", "y", "z"][: snap.dim]
    mesh = np.meshgrid(*snap.axes, indexing="ij")
    cols = [m.ravel(order="F") for m in mesh]
    cols.append(np.full(cols[0].size, snap.time))
    cols.append(snap.phi.ravel(order="F"))
    cols.append(snap.c.ravel(order="F"))
    with open(path, "w") as fh:
        fh.write(",".join(names + ["t", "phi", "c"]) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _export_vtk(snap: FieldSnapshot, path) -> None:
    spacing = []
    for a in snap.axes:
        if len(a) < 2:
            raise ValueError("vtk export needs at least two nodes per axis")
        h = np.diff(a)
        if not np.allclose(h, h[0], rtol=1.0e-9, atol=0.0):
            raise ValueError("vtk export needs uniform spacing")
        spacing.append(float(h[0]))
    dims = list(snap.phi.shape) + [1] * (3 - snap.dim)
    origin = [float(a[0]) for a in snap.axes] + [0.0] * (3 - snap.dim)
    spacing = spacing + [1.0] * (3 - snap.dim)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"fields at t={snap.time:.17g}\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}\n")
        fh.write(f"ORIGIN {origin[0]:.17g} {origin[1]:.17g} {origin[2]:.17g}\n")
        fh.write(f"SPACING {spacing[0]:.17g} {spacing[1]:.17g} "
                 f"{spacing[2]:.17g}\n")
        fh.write(f"POINT_DATA {snap.phi.size}\n")
        for name, field in (("phi", snap.phi), ("c", snap.c)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            # vtk expects the first index varying fastest
            for v in field.ravel(order="F"):
                fh.write(f"{v:.17g}\n")


def import_snapshot_csv(path) -> FieldSnapshot:
    """Read a CSV snapshot back into arrays, recovering the axes."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    dim = len(header) - 3
    if dim not in (1, 2, 3) or header[dim] != "t":
        raise ValueError("unrecognised snapshot header")
    axes = tuple(np.unique(data[:, j]) for j in range(dim))
    shape = tuple(len(a) for a in axes)
    if data.shape[0] != int(np.prod(shape)):
        raise GridMismatch("rows do not fill a tensor grid")
    times = data[:, dim]
    if not np.allclose(times, times[0], rtol=0.0, atol=1.0e-12):
        raise ValueError("snapshot rows carry differing times")
    order = np.lexsort(tuple(data[:, j] for j in range(dim - 1, -1, -1)))
    phi = data[order, dim + 1].reshape(shape)
    c = data[order, dim + 2].reshape(shape)
    return FieldSnapshot(time=float(times[0]), axes=axes, phi=phi, c=c)


def liquid_component_count(snap: FieldSnapshot,
                           threshold: float = 0.5) -> int:
    """Number of connected liquid regions (phi below threshold)."""
    labels, count = ndimage.label(snap.phi < threshold)
    return int(count)
