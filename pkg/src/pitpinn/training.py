"""Staggered PINN training: losses, balancing weights, Adam, main loop.

The two transport residuals are minimised in alternating windows of s_s
steps each, with collocation points redrawn at the start of every window
pair.  Loss terms are balanced by smoothed inverse-gradient-norm weights,
tracked separately per stage because the two residuals live on very
different scales.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import math
import os
import time
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Jet, ShapeMismatch
from .network import NetworkConfig, NetworkParams, init_params, \
    net_forward_batch, save_checkpoint
from .physics import NondimParams, PhysicalParams, Scenario, interp_h, \
    nondimensionalize, residual_ac, residual_ch
from .sampling import CollocationSet, SamplingConfig, build_collocation, \
    should_resample


class NonFiniteLoss(RuntimeError):
    """A loss or gradient became NaN or infinite."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class ZeroVector(ValueError):
    """Cosine similarity is undefined for a zero vector."""


class EmptySet(ValueError):
    """A collocation set required by the loss is empty."""


STAGE_AC = "AC"
STAGE_CH = "CH"
STAGE_COMBINED = "COMBINED"


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    s_max: int = 1000
    s_s: int = 25                # steps per stage window
    stagger: bool = True
    alpha_w: float = 0.5         # weight smoothing factor
    eta0: float = 5.0e-4         # initial learning rate
    decay_factor: float = 0.9
    decay_every: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0e-8
    cosine_every: int = 10       # 0 disables the diagnostic
    checkpoint_every: int = 0    # 0 keeps only initial and final
    chunk: int = 512
    workers: int = 1
    network: NetworkConfig = dataclasses.field(default_factory=NetworkConfig)
    sampling: SamplingConfig = dataclasses.field(default_factory=SamplingConfig)

    def __post_init__(self):
        if self.s_max < 0 or self.s_s < 1:
            raise ValueError("s_max must be non-negative and s_s positive")
        if not 0.0 <= self.alpha_w <= 1.0:
            raise ValueError("alpha_w must lie in [0, 1]")
        if self.eta0 <= 0.0 or not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("learning-rate schedule parameters out of range")
        if self.decay_every < 1 or self.chunk < 1 or self.workers < 1:
            raise ValueError("decay_every, chunk and workers must be positive")


@dataclasses.dataclass
class LossBreakdown:
    stage: str
    l_pde: float
    l_bc: float
    l_ic: float
    w_pde: float = 1.0
    w_bc: float = 1.0
    w_ic: float = 1.0

    @property
    def total(self) -> float:
        return (self.w_pde * self.l_pde + self.w_bc * self.l_bc
                + self.w_ic * self.l_ic)


@dataclasses.dataclass
class OptimizerState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 0.0

    @classmethod
    def fresh(cls, params: dict) -> "OptimizerState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()})


@dataclasses.dataclass
class StepRecord:
    step: int
    stage: str
    l_pde: float
    l_bc: float
    l_ic: float
    w_pde: float
    w_bc: float
    w_ic: float
    lr: float
    cosine_sim: Optional[float] = None
    l_ac: Optional[float] = None
    l_ch: Optional[float] = None


@dataclasses.dataclass
class TrainResult:
    params: NetworkParams
    history: list
    resample_steps: list
    weights: dict
    wall_time: float


def stage_for_step(step: int, s_s: int, stagger_enabled: bool = True) -> str:
    """AC for the first s_s steps of each window pair, then CH."""
    if step < 0 or s_s < 1:
        raise ValueError("step must be non-negative and s_s positive")
    if not stagger_enabled:
        return STAGE_COMBINED
    return STAGE_AC if step % (2 * s_s) < s_s else STAGE_CH

def learning_rate(step: int, cfg: TrainConfig) -> float:
    return cfg.eta0 * cfg.decay_factor ** (step // cfg.decay_every)


def gradnorm_weights(grad_norms, previous_weights, alpha_w: float) -> np.ndarray:
    """Smoothed inverse-norm balancing weights.

    The raw weight of term j is the sum of all norms divided by norm j;
    terms with zero gradient keep their previous weight.
    """
    norms = np.asarray(grad_norms, dtype=np.float64)
    prev = np.asarray(previous_weights, dtype=np.float64)
    if norms.shape != prev.shape:
        raise ShapeMismatch("one previous weight per gradient norm required")
    if np.any(norms < 0.0):
        raise ValueError("gradient norms must be non-negative")
    total = norms.sum()
    out = prev.copy()
    active = norms > 0.0
    out[active] = (alpha_w * prev[active]
                   + (1.0 - alpha_w) * total / norms[active])
    return out


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch("vectors must have equal length")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity needs two non-zero vectors")
    return float(np.dot(a, b)) / (na * nb)


def flatten_grads(grads: dict) -> np.ndarray:
    return np.concatenate([np.asarray(grads[k], dtype=np.float64).ravel()
                           for k in sorted(grads)])


def adam_step(state: OptimizerState, grads: dict, params: dict,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1.0e-8) -> None:
    """One Adam update in place; state.lr must be set by the caller."""
    for name in sorted(params):
        if np.shape(grads[name]) != np.shape(params[name]):
            raise ShapeMismatch(f"gradient shape mismatch for {name}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name in sorted(params):
        g = np.asarray(grads[name], dtype=np.float64)
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        params[name] -= state.lr * m_hat / (np.sqrt(v_hat) + eps)


def _point_jets(pts: np.ndarray, seed_axis: int, n_axes: int):
    """Jet coordinates for a batch, seeded along one axis (-1: none)."""
    return [Jet(pts[:, j], 1.0 if j == seed_axis else 0.0, 0.0)
            for j in range(n_axes)]


def _chunk_ranges(n: int, chunk: int):
    return [(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def _term_gradient(tape: ad.Tape, term, leaf_vars: dict) -> dict:
    names = list(leaf_vars)
    grads = tape.gradient(term, [leaf_vars[k] for k in names])
    return dict(zip(names, grads))


def _accumulate(dst: Optional[dict], src: dict) -> dict:
    if dst is None:
        return {k: np.array(v, dtype=np.float64) for k, v in src.items()}
    for k, v in src.items():
        dst[k] += v
    return dst


def _general_chunk(net: NetworkParams, nondim: NondimParams, pts: np.ndarray,
                   need: set, want_grads: bool):
    """Sum of squared residuals (and gradients) over one interior chunk.

    One second-order jet pass per spatial axis accumulates the Laplacians
    of phi, c and h(phi); a first-order pass in time gives the rates.
    """
    tape = ad.Tape()
    leafs = {k: tape.leaf(v, k) for k, v in net.trainable().items()}
    arrays = dict(net.arrays)
    arrays.update(leafs)
    dim = net.config.dim

    lap_phi = lap_c = lap_h = None
    for axis in range(dim):
        coords = _point_jets(pts, axis, dim + 1)
        phi_j, c_j = net_forward_batch(coords, net, arrays=arrays)
        h_j = interp_h(phi_j)
        lap_phi = phi_j.f2 if lap_phi is None else lap_phi + phi_j.f2
        lap_c = c_j.f2 if lap_c is None else lap_c + c_j.f2
        lap_h = h_j.f2 if lap_h is None else lap_h + h_j.f2
    coords = _point_jets(pts, dim, dim + 1)
    phi_j, c_j = net_forward_batch(coords, net, arrays=arrays)
    phi, c = phi_j.f0, c_j.f0
    phi_t, c_t = phi_j.f1, c_j.f1

    out = {}
    if "ac" in need:
        r = residual_ac(phi_t, phi, c, lap_phi, nondim)
        ss = ad.total(r * r)
        out["ac"] = (float(ss.value),
                     _term_gradient(tape, ss, leafs) if want_grads else None)
    if "ch" in need:
        r = residual_ch(c_t, lap_c, lap_h, nondim)
        ss = ad.total(r * r)
        out["ch"] = (float(ss.value),
                     _term_gradient(tape, ss, leafs) if want_grads else None)
    return out


def _dirichlet_chunk(net: NetworkParams, pts: np.ndarray, targets: np.ndarray,
                     want_grads: bool):
    tape = ad.Tape()
    leafs = {k: tape.leaf(v, k) for k, v in net.trainable().items()}
    arrays = dict(net.arrays)
    arrays.update(leafs)
    coords = [pts[:, j] for j in range(pts.shape[1])]
    phi, c = net_forward_batch(coords, net, arrays=arrays)
    dphi = phi - targets[:, 0]
    dc = c - targets[:, 1]
    ss = ad.total(dphi * dphi) + ad.total(dc * dc)
    return float(ss.value), (_term_gradient(tape, ss, leafs)
                             if want_grads else None)


def _flux_chunk(net: NetworkParams, pts: np.ndarray, axis: int,
                want_grads: bool):
    tape = ad.Tape()
    leafs = {k: tape.leaf(v, k) for k, v in net.trainable().items()}
    arrays = dict(net.arrays)
    arrays.update(leafs)
    coords = _point_jets(pts, axis, pts.shape[1])
    phi_j, c_j = net_forward_batch(coords, net, arrays=arrays)
    ss = ad.total(phi_j.f1 * phi_j.f1) + ad.total(c_j.f1 * c_j.f1)
    return float(ss.value), (_term_gradient(tape, ss, leafs)
                             if want_grads else None)


def _initial_chunk(net: NetworkParams, pts: np.ndarray, targets: np.ndarray,
                   want_grads: bool):
    t0 = np.zeros((len(pts), 1))
    coords = np.concatenate([pts, t0], axis=1)
    return _dirichlet_chunk(net, coords, targets, want_grads)


def evaluate_terms(net: NetworkParams, colloc: CollocationSet,
                   nondim: NondimParams, need: set, want_grads: bool = True,
                   chunk: int = 512, workers: int = 1) -> dict:
    """Mean losses and parameter gradients for the requested terms.

    Chunks are reduced in a fixed order so the result does not depend on
    the worker count.
    """
    if len(colloc.general) == 0 or len(colloc.initial_points) == 0 \
            or len(colloc.boundary_points) == 0:
        raise EmptySet("every collocation set must contain points")

    jobs: list = []
    if need & {"ac", "ch"}:
        pde_need = need & {"ac", "ch"}
        for s, e in _chunk_ranges(len(colloc.general), chunk):
            jobs.append(("pde", lambda s=s, e=e: _general_chunk(
                net, nondim, colloc.general[s:e], pde_need, want_grads)))
    if "bc" in need:
        dir_idx = np.flatnonzero(~colloc.boundary_is_flux)
        for s, e in _chunk_ranges(len(dir_idx), chunk):
            sel = dir_idx[s:e]
            jobs.append(("bc", lambda sel=sel: _dirichlet_chunk(
                net, colloc.boundary_points[sel],
                colloc.boundary_targets[sel], want_grads)))
        flux_idx = np.flatnonzero(colloc.boundary_is_flux)
        for axis in sorted(set(colloc.boundary_normal_axis[flux_idx])):
            rows = flux_idx[colloc.boundary_normal_axis[flux_idx] == axis]
            for s, e in _chunk_ranges(len(rows), chunk):
                sel = rows[s:e]
                jobs.append(("bc", lambda sel=sel, axis=axis: _flux_chunk(
                    net, colloc.boundary_points[sel], int(axis), want_grads)))
    if "ic" in need:
        for s, e in _chunk_ranges(len(colloc.initial_points), chunk):
            jobs.append(("ic", lambda s=s, e=e: _initial_chunk(
                net, colloc.initial_points[s:e],
                colloc.initial_targets[s:e], want_grads)))

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda job: job[1](), jobs))
    else:
        results = [job[1]() for job in jobs]

    sums: dict = {}
    grads: dict = {}
    for (tag, _), res in zip(jobs, results):
        parts = res if tag == "pde" else {tag: res}
        for term, (ss, g) in parts.items():
            sums[term] = sums.get(term, 0.0) + ss
            if want_grads and g is not None:
                grads[term] = _accumulate(grads.get(term), g)

    counts = {"ac": len(colloc.general), "ch": len(colloc.general),
              "bc": len(colloc.boundary_points),
              "ic": len(colloc.initial_points)}
    out = {}
    for term, ss in sums.items():
        n = counts[term]
        g = None
        if want_grads:
            g = {k: v / n for k, v in grads[term].items()}
        out[term] = (ss / n, g)
    return out


def compute_losses(net: NetworkParams, colloc: CollocationSet,
                   stage: str, nondim: NondimParams,
                   chunk: int = 512, workers: int = 1) -> LossBreakdown:
    """Unweighted loss values for one stage (weights left at 1)."""
    if stage == STAGE_COMBINED:
        pde_terms = {"ac", "ch"}
    elif stage == STAGE_AC:
        pde_terms = {"ac"}
    elif stage == STAGE_CH:
        pde_terms = {"ch"}
    else:
        raise ValueError(f"unknown stage {stage!r}")
    terms = evaluate_terms(net, colloc, nondim, pde_terms | {"bc", "ic"},
                           want_grads=False, chunk=chunk, workers=workers)
    l_pde = sum(terms[t][0] for t in pde_terms)
    return LossBreakdown(stage=stage, l_pde=l_pde, l_bc=terms["bc"][0],
                         l_ic=terms["ic"][0])


def _grad_norm(g: dict) -> float:
    return math.sqrt(sum(float(np.sum(np.asarray(v) ** 2))
                         for v in g.values()))


def _combine(parts, coeffs) -> dict:
    out = {}
    for g, w in zip(parts, coeffs):
        for k, v in g.items():
            out[k] = out.get(k, 0.0) + w * v
    return out


def train(config: TrainConfig, scenario: Scenario, seed: int,
          phys: Optional[PhysicalParams] = None,
          nondim: Optional[NondimParams] = None,
          out_dir: Optional[str] = None,
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Run the staggered training loop and return the trained parameters.

    History rows mirror the on-disk log: step, stage, losses, weights,
    learning rate and the AC/CH gradient cosine on diagnostic steps.
    """
    phys = phys or PhysicalParams()
    nondim = nondim or nondimensionalize(phys, 1.0e-4, 10.0)
    if config.network.dim != scenario.dim:
        raise ValueError("network dimension must match the scenario")

    start = time.perf_counter()
    net = init_params(seed, config.network)
    params = net.trainable()
    opt = OptimizerState.fresh(params)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A11]))
    # Each stage balances its own three terms, so each keeps its own
    # smoothed weight state; gradient norms differ between the two
    # residuals by many orders of magnitude and a shared state would
    # poison every window with the other stage's scales.
    weights_by_stage: dict = {}
    weights = {"pde": 1.0, "bc": 1.0, "ic": 1.0}

    history: list = []
    resample_steps: list = []
    colloc = None
    writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(net, os.path.join(out_dir, "checkpoint_initial.bin"))
        writer = open(os.path.join(out_dir, "history.tsv"), "w")
        writer.write("step\tstage\tl_pde\tl_bc\tl_ic\tw_pde\tw_bc\tw_ic"
                     "\tlr\tcosine_sim\n")

    try:
        for step in range(config.s_max):
            if colloc is None or should_resample(step, config.s_s):
                colloc = build_collocation(scenario, config.sampling, rng,
                                           phys, nondim, epoch=step)
                resample_steps.append(step)

            stage = stage_for_step(step, config.s_s, config.stagger)
            weights = weights_by_stage.setdefault(
                stage, {"pde": 1.0, "bc": 1.0, "ic": 1.0})
            diagnose = (config.cosine_every > 0
                        and step % config.cosine_every == 0)
            pde_terms = ({"ac", "ch"} if stage == STAGE_COMBINED or diagnose
                         else {"ac"} if stage == STAGE_AC else {"ch"})
            terms = evaluate_terms(net, colloc, nondim,
                                   pde_terms | {"bc", "ic"},
                                   want_grads=True, chunk=config.chunk,
                                   workers=config.workers)

            if stage == STAGE_COMBINED:
                l_pde = terms["ac"][0] + terms["ch"][0]
                g_pde = _combine((terms["ac"][1], terms["ch"][1]), (1.0, 1.0))
            else:
                active = "ac" if stage == STAGE_AC else "ch"
                l_pde = terms[active][0]
                g_pde = terms[active][1]
            l_bc, g_bc = terms["bc"]
            l_ic, g_ic = terms["ic"]

            norms = [_grad_norm(g_pde), _grad_norm(g_bc), _grad_norm(g_ic)]
            w = gradnorm_weights(norms,
                                 [weights["pde"], weights["bc"], weights["ic"]],
                                 config.alpha_w)
            weights = {"pde": float(w[0]), "bc": float(w[1]),
                       "ic": float(w[2])}
            weights_by_stage[stage] = weights

            breakdown = LossBreakdown(stage=stage, l_pde=l_pde, l_bc=l_bc,
                                      l_ic=l_ic, w_pde=weights["pde"],
                                      w_bc=weights["bc"], w_ic=weights["ic"])
            total_grad = _combine((g_pde, g_bc, g_ic),
                                  (weights["pde"], weights["bc"],
                                   weights["ic"]))
            if not math.isfinite(breakdown.total) or any(
                    not np.all(np.isfinite(v)) for v in total_grad.values()):
                raise NonFiniteLoss(step)

            cos = None
            if diagnose:
                ga = flatten_grads(terms["ac"][1])
                gc = flatten_grads(terms["ch"][1])
                if np.linalg.norm(ga) > 0.0 and np.linalg.norm(gc) > 0.0:
                    cos = cosine_similarity(ga, gc)

            opt.lr = learning_rate(step, config)
            adam_step(opt, total_grad, params,
                      beta1=config.beta1, beta2=config.beta2, eps=config.eps)
            for name, value in params.items():
                net.arrays[name] = value

            rec = StepRecord(step=step, stage=stage, l_pde=l_pde, l_bc=l_bc,
                             l_ic=l_ic, w_pde=weights["pde"],
                             w_bc=weights["bc"], w_ic=weights["ic"],
                             lr=opt.lr, cosine_sim=cos,
                             l_ac=terms["ac"][0] if "ac" in terms else None,
                             l_ch=terms["ch"][0] if "ch" in terms else None)
            history.append(rec)
            if writer is not None:
                cos_txt = "" if cos is None else f"{cos:.17g}"
                writer.write(f"{step}\t{stage}\t{l_pde:.17g}\t{l_bc:.17g}"
                             f"\t{l_ic:.17g}\t{weights['pde']:.17g}"
                             f"\t{weights['bc']:.17g}\t{weights['ic']:.17g}"
                             f"\t{opt.lr:.17g}\t{cos_txt}\n")
                writer.flush()
            if (out_dir is not None and config.checkpoint_every > 0
                    and (step + 1) % config.checkpoint_every == 0):
                save_checkpoint(net, os.path.join(
                    out_dir, f"checkpoint_{step + 1:06d}.bin"))
            if log is not None and (step % 50 == 0 or step == config.s_max - 1):
                log(f"step {step} stage {stage} total {breakdown.total:.6g}")
    finally:
        if writer is not None:
            writer.close()

    if out_dir is not None:
        save_checkpoint(net, os.path.join(out_dir, "checkpoint_final.bin"))
    return TrainResult(params=net, history=history,
                       resample_steps=resample_steps, weights=weights,
                       wall_time=time.perf_counter() - start)
