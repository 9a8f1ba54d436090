"""Reference solver: backward-Euler finite differences with Newton updates.

The two fields are advanced together on a node-centred grid.  Flux-free
faces mirror the neighbour across the boundary node; Dirichlet faces pin
the nodal values.  Time steps adapt to Newton convergence speed.
"""

from __future__ import annotations

import dataclasses
import math
import time
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .metrics import FieldSnapshot
from .physics import (NondimParams, PhysicalParams, Scenario, face_axis,
                      face_names, face_side, initial_c, initial_phi,
                      interp_h, interp_h_prime, interp_h_second,
                      signed_interface_distance, well_g_prime, well_g_second)


class Diverged(RuntimeError):
    """Newton failed to converge for the attempted step."""


class TimeStepUnderflow(RuntimeError):
    """The step size fell below its floor while recovering."""


@dataclasses.dataclass
class Grid:
    axes: tuple                  # per-axis node coordinates
    spacing: tuple
    phi: np.ndarray
    c: np.ndarray
    # face -> ("flux",) | ("dirichlet", phi_vals, c_vals)
    #       | ("mixed", pin_mask, phi_vals, c_vals)
    face_bc: dict

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)


@dataclasses.dataclass
class TimeStepController:
    dt: float
    dt_min: float = 1.0e-8
    dt_max: float = math.inf
    growth: float = 1.5
    shrink: float = 2.0
    fast_iters: int = 5
    trace: list = dataclasses.field(default_factory=list)

    def on_converged(self, iters: int) -> None:
        if iters < self.fast_iters and self.dt * self.growth <= self.dt_max:
            self.dt *= self.growth
            self.trace.append(self.growth)
        else:
            self.trace.append(1.0)

    def on_diverged(self) -> None:
        self.dt /= self.shrink
        self.trace.append(1.0 / self.shrink)
        if self.dt < self.dt_min:
            raise TimeStepUnderflow(
                f"step size {self.dt:g} fell below {self.dt_min:g}")


def _mesh_points(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def build_grid(scenario: Scenario, phys: PhysicalParams,
               nondim: NondimParams, resolution=None) -> Grid:
    """Grid over the scenario box with the initial diffuse fields.

    Node spacing must resolve the interface: at most a quarter of the
    non-dimensional interface thickness per axis.
    """
    ell_star = phys.ell / nondim.l_c
    target = ell_star / 4.0
    axes = []
    spacing = []
    for j in range(scenario.dim):
        lo, hi = scenario.space_lo[j], scenario.space_hi[j]
        if resolution is None:
            n = int(math.ceil((hi - lo) / target)) + 1
        else:
            n = int(resolution[j])
        if n < 2:
            raise ValueError("each axis needs at least two nodes")
        h = (hi - lo) / (n - 1)
        if h > target * (1.0 + 1.0e-12):
            raise ValueError(
                f"axis {j} spacing {h:g} exceeds the interface limit {target:g}")
        axes.append(np.linspace(lo, hi, n))
        spacing.append(h)

    pts = _mesh_points(axes)
    sd = signed_interface_distance(pts, scenario)
    shape = tuple(len(a) for a in axes)
    phi = initial_phi(sd, phys, nondim.l_c).reshape(shape)
    c = initial_c(sd, phys, nondim.l_c).reshape(shape)

    face_bc = {}
    for f in face_names(scenario.dim):
        if f in scenario.flux_free_faces:
            face_bc[f] = ("flux",)
            continue
        ax = face_axis(f)
        bound = scenario.space_lo[ax] if face_side(f) < 0 else scenario.space_hi[ax]
        sl = [slice(None)] * scenario.dim
        sl[ax] = 0 if face_side(f) < 0 else -1
        sl = tuple(sl)
        if f in scenario.liquid_boundary_faces:
            face_bc[f] = ("dirichlet", np.zeros(phi[sl].shape),
                          np.zeros(c[sl].shape))
            continue
        face_axes = [axes[k] for k in range(scenario.dim) if k != ax]
        mesh = np.meshgrid(*face_axes, indexing="ij")
        pts = np.empty(mesh[0].shape + (scenario.dim,))
        k = 0
        for j in range(scenario.dim):
            if j == ax:
                pts[..., j] = bound
            else:
                pts[..., j] = mesh[k]
                k += 1
        sd_face = signed_interface_distance(pts, scenario)
        mouth = sd_face >= 0.0
        if mouth.any():
            # pit mouths pin the liquid reservoir; the surrounding solid
            # surface is left flux-free so the pits can widen laterally
            face_bc[f] = ("mixed", mouth, np.zeros(mouth.shape),
                          np.zeros(mouth.shape))
        else:
            face_bc[f] = ("dirichlet", phi[sl].copy(), c[sl].copy())
    return Grid(axes=tuple(axes), spacing=tuple(spacing), phi=phi, c=c,
                face_bc=face_bc)


def fd_laplacian(grid: Grid, field: str, index) -> float:
    """Second-difference Laplacian of "phi" or "c" at one node.

    Flux-free faces mirror the interior neighbour symmetrically; Dirichlet
    faces mirror it through the face target.
    """
    if field not in ("phi", "c"):
        raise ValueError("field must be 'phi' or 'c'")
    u = grid.phi if field == "phi" else grid.c
    index = tuple(int(i) for i in index)
    dim = len(grid.axes)
    total = 0.0
    for ax in range(dim):
        n = len(grid.axes[ax])
        h = grid.spacing[ax]
        u0 = float(u[index])

        def value(i):
            if 0 <= i < n:
                sl = list(index)
                sl[ax] = i
                return float(u[tuple(sl)])
            face = f"{'xyz'[ax]}{'min' if i < 0 else 'max'}"
            bc = grid.face_bc[face]
            nb = 1 if i < 0 else n - 2
            sl_nb = list(index)
            sl_nb[ax] = nb
            inner = float(u[tuple(sl_nb)])
            if bc[0] == "flux":
                return inner
            face_sl = tuple(v for k, v in enumerate(index) if k != ax)
            if bc[0] == "mixed":
                if not bc[1][face_sl]:
                    return inner
                vals = bc[2] if field == "phi" else bc[3]
                target = float(np.broadcast_to(vals, bc[1].shape)[face_sl])
            else:
                target = float((bc[1] if field == "phi" else bc[2])[face_sl])
            return 2.0 * target - inner

        total += (value(index[ax] - 1) - 2.0 * u0
                  + value(index[ax] + 1)) / (h * h)
    return total


def _axis_operator(n: int, h: float) -> sp.csr_matrix:
    """1-D second-difference matrix with symmetric mirror end rows."""
    main = np.full(n, -2.0 / (h * h))
    off = np.full(n - 1, 1.0 / (h * h))
    t = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    t[0, 1] = 2.0 / (h * h)
    t[n - 1, n - 2] = 2.0 / (h * h)
    return t.tocsr()


def _trap_weights(axes, spacing) -> np.ndarray:
    w = np.array([1.0])
    for a, h in zip(axes, spacing):
        wj = np.full(len(a), h)
        wj[0] = wj[-1] = h / 2.0
        w = np.multiply.outer(w, wj).ravel()
    return w


@dataclasses.dataclass
class _Assembly:
    lap: sp.csr_matrix
    pinned: np.ndarray      # flat bool
    pin_phi: np.ndarray     # flat targets, valid where pinned
    pin_c: np.ndarray
    weights: np.ndarray


def _assemble(grid: Grid) -> _Assembly:
    shape = grid.shape
    dim = len(shape)
    lap = None
    for ax in range(dim):
        t = _axis_operator(shape[ax], grid.spacing[ax])
        mats = [sp.identity(shape[k], format="csr") if k != ax else t
                for k in range(dim)]
        term = mats[0]
        for m in mats[1:]:
            term = sp.kron(term, m, format="csr")
        lap = term if lap is None else lap + term

    pinned = np.zeros(shape, dtype=bool)
    pin_phi = np.zeros(shape)
    pin_c = np.zeros(shape)
    for f, bc in grid.face_bc.items():
        if bc[0] == "flux":
            continue
        ax = face_axis(f)
        sl = [slice(None)] * dim
        sl[ax] = 0 if face_side(f) < 0 else -1
        sl = tuple(sl)
        if bc[0] == "dirichlet":
            pinned[sl] = True
            pin_phi[sl] = bc[1]
            pin_c[sl] = bc[2]
        else:  # mixed: pin only the masked face nodes
            mask, phi_vals, c_vals = bc[1], bc[2], bc[3]
            face_pin = pinned[sl].copy()
            face_pin[mask] = True
            pinned[sl] = face_pin
            fp = pin_phi[sl].copy()
            fc = pin_c[sl].copy()
            fp[mask] = np.broadcast_to(phi_vals, mask.shape)[mask]
            fc[mask] = np.broadcast_to(c_vals, mask.shape)[mask]
            pin_phi[sl] = fp
            pin_c[sl] = fc
    return _Assembly(lap=lap.tocsr(), pinned=pinned.ravel(),
                     pin_phi=pin_phi.ravel(), pin_c=pin_c.ravel(),
                     weights=_trap_weights(grid.axes, grid.spacing))


def _residual(c, phi, c_prev, phi_prev, dt, asm: _Assembly,
              nd: NondimParams):
    dce = nd.c_se - nd.c_le
    h = interp_h(phi)
    hp = interp_h_prime(phi)
    lap_c = asm.lap @ c
    lap_h = asm.lap @ h
    lap_p = asm.lap @ phi
    f_c = (c - c_prev) / dt - nd.n_ch * lap_c + nd.n_ch * dce * lap_h
    brkt = c - h * dce - nd.c_le
    f_p = ((phi - phi_prev) / dt - nd.n_ac1 * brkt * dce * hp
           + nd.n_ac2 * well_g_prime(phi) - nd.n_ac3 * lap_p)
    f_c[asm.pinned] = c[asm.pinned] - asm.pin_c[asm.pinned]
    f_p[asm.pinned] = phi[asm.pinned] - asm.pin_phi[asm.pinned]
    return np.concatenate([f_c, f_p])


def _jacobian(c, phi, dt, asm: _Assembly, nd: NondimParams) -> sp.csc_matrix:
    n = len(c)
    dce = nd.c_se - nd.c_le
    h = interp_h(phi)
    hp = interp_h_prime(phi)
    hpp = interp_h_second(phi)
    brkt = c - h * dce - nd.c_le
    eye = sp.identity(n, format="csr")
    j_cc = eye / dt - nd.n_ch * asm.lap
    j_cp = nd.n_ch * dce * (asm.lap @ sp.diags(hp))
    j_pc = sp.diags(-nd.n_ac1 * dce * hp)
    a_diag = (-nd.n_ac1 * dce * (brkt * hpp - dce * hp * hp)
              + nd.n_ac2 * well_g_second(phi))
    j_pp = eye / dt + sp.diags(a_diag) - nd.n_ac3 * asm.lap

    free = sp.diags((~asm.pinned).astype(np.float64))
    pin = sp.diags(asm.pinned.astype(np.float64))
    j_cc = free @ j_cc + pin
    j_cp = free @ j_cp
    j_pc = free @ j_pc
    j_pp = free @ j_pp + pin
    return sp.bmat([[j_cc, j_cp], [j_pc, j_pp]], format="csc")


def _newton(c, phi, dt, asm: _Assembly, nd: NondimParams,
            max_iter: int = 10, tol_u: float = 1.0e-11):
    """Solve one implicit step; returns new fields and iteration count."""
    c_prev = c.copy()
    phi_prev = phi.copy()
    c = c.copy()
    phi = phi.copy()
    f = _residual(c, phi, c_prev, phi_prev, dt, asm, nd)
    if not np.all(np.isfinite(f)):
        raise Diverged("non-finite residual")
    # exact fixed points stay bitwise untouched
    if np.max(np.abs(f)) <= 1.0e-14 * (1.0 + 1.0 / dt):
        return c, phi, 0
    n = len(c)
    for it in range(max_iter):
        jac = _jacobian(c, phi, dt, asm, nd)
        try:
            delta = splu(jac).solve(-f)
        except RuntimeError as exc:
            raise Diverged(str(exc)) from None
        if not np.all(np.isfinite(delta)):
            raise Diverged("non-finite Newton update")
        c += delta[:n]
        phi += delta[n:]
        f = _residual(c, phi, c_prev, phi_prev, dt, asm, nd)
        if not np.all(np.isfinite(f)):
            raise Diverged("non-finite residual")
        scale = max(1.0, float(np.max(np.abs(c))), float(np.max(np.abs(phi))))
        if np.max(np.abs(delta)) <= tol_u * scale:
            return c, phi, it + 1
    raise Diverged(f"no convergence in {max_iter} iterations")


def step_coupled(grid: Grid, dt: float, nondim: NondimParams,
                 assembly: Optional[_Assembly] = None) -> int:
    """Advance the grid fields by one implicit step of size dt in place."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    asm = assembly if assembly is not None else _assemble(grid)
    c, phi, iters = _newton(grid.c.ravel(), grid.phi.ravel(), dt, asm, nondim)
    grid.c = c.reshape(grid.shape)
    grid.phi = phi.reshape(grid.shape)
    return iters


def integrate_c(grid: Grid) -> float:
    """Trapezoidal integral of the concentration over the box."""
    w = _trap_weights(grid.axes, grid.spacing)
    return float(w @ grid.c.ravel())


@dataclasses.dataclass
class ReferenceResult:
    grid: Grid
    snapshots: list
    step_log: list          # (time reached, dt used, newton iterations)
    controller: TimeStepController
    wall_time: float


def solve_reference(scenario: Scenario, phys: Optional[PhysicalParams] = None,
                    nondim: Optional[NondimParams] = None,
                    output_times=None, resolution=None,
                    dt0: float = 1.0e-4, dt_min: float = 1.0e-8,
                    dt_max: Optional[float] = None,
                    log=None) -> ReferenceResult:
    """Integrate the coupled system to t_end and capture snapshots.

    Snapshots are linear time interpolants between the bracketing steps.
    The final step is clamped to land exactly on t_end.
    """
    from .physics import nondimensionalize
    phys = phys or PhysicalParams()
    nondim = nondim or nondimensionalize(phys, 1.0e-4, 10.0)
    start = time.perf_counter()
    grid = build_grid(scenario, phys, nondim, resolution=resolution)
    asm = _assemble(grid)

    t_end = scenario.t_end
    raw = (output_times if output_times is not None
           else np.linspace(0.0, t_end, 32))
    pending = sorted(float(t) for t in np.unique(np.asarray(raw, dtype=np.float64)))
    for tau in pending:
        if tau < -1.0e-12 or tau > t_end + 1.0e-12:
            raise ValueError("output times must lie in [0, t_end]")
    snapshots = []
    while pending and pending[0] <= 1.0e-12:
        pending.pop(0)
        snapshots.append(FieldSnapshot(time=0.0, axes=grid.axes,
                                       phi=grid.phi.copy(), c=grid.c.copy()))

    ctrl = TimeStepController(dt=dt0, dt_min=dt_min,
                              dt_max=dt_max if dt_max is not None
                              else t_end / 40.0)
    t = 0.0
    step_log = []
    c = grid.c.ravel().copy()
    phi = grid.phi.ravel().copy()
    while t < t_end - 1.0e-12:
        clamped = t + ctrl.dt > t_end
        dt_try = t_end - t if clamped else ctrl.dt
        try:
            c_new, phi_new, iters = _newton(c, phi, dt_try, asm, nondim)
        except Diverged:
            ctrl.on_diverged()
            continue
        t_new = t_end if clamped else t + dt_try
        while pending and pending[0] <= t_new + 1.0e-12:
            tau = pending.pop(0)
            theta = min(max((tau - t) / dt_try, 0.0), 1.0)
            snapshots.append(FieldSnapshot(
                time=tau, axes=grid.axes,
                phi=((1.0 - theta) * phi + theta * phi_new).reshape(grid.shape),
                c=((1.0 - theta) * c + theta * c_new).reshape(grid.shape)))
        step_log.append((t_new, dt_try, iters))
        c, phi = c_new, phi_new
        t = t_new
        if not clamped:
            ctrl.on_converged(iters)
        if log is not None and len(step_log) % 10 == 0:
            log(f"t={t:.6g} dt={ctrl.dt:.3g} steps={len(step_log)}")

    grid.c = c.reshape(grid.shape)
    grid.phi = phi.reshape(grid.shape)
    return ReferenceResult(grid=grid, snapshots=snapshots, step_log=step_log,
                           controller=ctrl,
                           wall_time=time.perf_counter() - start)
