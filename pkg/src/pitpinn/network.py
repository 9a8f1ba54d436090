"""Coordinate network: Fourier embedding, gated MLP, constrained output head.

The forward pass is written once over the generic math layer, so the same
code runs on plain arrays (evaluation), tape variables (parameter gradients),
and jets (input derivatives).  Ablation flags bypass individual blocks.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Jet, Var, _is_zero
from .physics import interp_h


class DimensionMismatch(ValueError):
    """Coordinate count does not match the embedding dimensionality."""


MAGIC = b"PITPINN\x01"


@dataclasses.dataclass(frozen=True)
class NetworkConfig:
    dim: int = 2                  # spatial input dimensionality
    m_f: int = 64                 # Fourier modes per block
    sigma_x: float = 2.0          # spatial frequency scale
    sigma_t: float = 0.4          # temporal frequency scale
    m_w: int = 128                # hidden width
    m_h: int = 6                  # hidden depth
    fourier: bool = True
    modified_mlp: bool = True
    hard_constraints: bool = True
    c_se: float = 1.0
    c_le: float = 0.036

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2, or 3")
        if min(self.m_f, self.m_w, self.m_h) < 1:
            raise ValueError("m_f, m_w, m_h must be positive")

    @property
    def feature_dim(self) -> int:
        return 4 * self.m_f if self.fourier else self.dim + 1


@dataclasses.dataclass(frozen=True)
class FourierEmbedding:
    b_x: np.ndarray       # (m_f, dim) spatial frequencies, fixed after init
    b_t: np.ndarray       # (m_f, 1) temporal frequencies, fixed after init
    sigma_x: float
    sigma_t: float


@dataclasses.dataclass(frozen=True)
class HardConstraintHead:
    c_se: float
    c_le: float


@dataclasses.dataclass
class NetworkParams:
    config: NetworkConfig
    seed: int
    arrays: dict[str, np.ndarray]

    FIXED = ("fourier.b_x", "fourier.b_t")

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if k not in self.FIXED}

    @property
    def embedding(self) -> FourierEmbedding:
        return FourierEmbedding(self.arrays["fourier.b_x"],
                                self.arrays["fourier.b_t"],
                                self.config.sigma_x, self.config.sigma_t)

    @property
    def head(self) -> HardConstraintHead:
        return HardConstraintHead(self.config.c_se, self.config.c_le)


def init_params(seed: int, config: NetworkConfig) -> NetworkParams:
    """Sample a fresh parameter set; identical seeds give identical bits.

    Fourier frequencies are Gaussian with the configured scales and stay
    fixed; trainable weights use a uniform fan-in range, biases start at
    zero.  The draw order below is part of the reproducibility contract.
    """
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    arrays["fourier.b_x"] = config.sigma_x * rng.standard_normal(
        (config.m_f, config.dim))
    arrays["fourier.b_t"] = config.sigma_t * rng.standard_normal((config.m_f, 1))

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    n_in = config.feature_dim
    if config.modified_mlp:
        for gate in ("gate_u", "gate_v"):
            arrays[f"{gate}.w"] = uniform((config.m_w, n_in), n_in)
            arrays[f"{gate}.b"] = np.zeros(config.m_w)
    fan = n_in
    for layer in range(config.m_h):
        arrays[f"hidden.{layer}.w"] = uniform((config.m_w, fan), fan)
        arrays[f"hidden.{layer}.b"] = np.zeros(config.m_w)
        fan = config.m_w
    for out in ("out.w_cl", "out.w_phi"):
        arrays[out] = uniform((config.m_w,), config.m_w)
    arrays["out.b_cl"] = np.zeros(())
    arrays["out.b_phi"] = np.zeros(())
    return NetworkParams(config, seed, arrays)


def parameter_count(config: NetworkConfig, trainable_only: bool = True) -> int:
    """Closed-form parameter count for a given configuration."""
    n_z = config.feature_dim
    count = 0
    if not trainable_only:
        count += config.m_f * config.dim + config.m_f
    if config.modified_mlp:
        count += 2 * (config.m_w * n_z + config.m_w)
    count += config.m_w * n_z + config.m_w
    count += (config.m_h - 1) * (config.m_w * config.m_w + config.m_w)
    count += 2 * config.m_w + 2
    return count


# ---------------------------------------------------------------------------
# Forward pass pieces.
# ---------------------------------------------------------------------------

def _column(comp, n: int):
    """Shape a jet component of a single coordinate into an (n, 1) block."""
    if _is_zero(comp):
        return 0.0
    if np.isscalar(comp) or getattr(comp, "ndim", 1) == 0:
        return np.full((n, 1), float(comp))
    return np.asarray(comp, dtype=np.float64).reshape(n, 1)


def _freq_block(coords: Sequence, b: np.ndarray):
    """Linear combination sum_j coord_j * b[:, j] for array or jet coords."""
    n = None
    for cj in coords:
        f0 = cj.f0 if isinstance(cj, Jet) else cj
        n = np.asarray(f0).shape[0] if np.asarray(f0).ndim else 1
        break
    if not any(isinstance(cj, Jet) for cj in coords):
        x = np.stack([np.asarray(cj, dtype=np.float64) for cj in coords], axis=1)
        return x @ b.T

    def outer_comp(comp, col):
        if _is_zero(comp):
            return 0.0
        if np.isscalar(comp) or getattr(comp, "ndim", 1) == 0:
            return float(comp) * np.broadcast_to(col, (n, col.size))
        return np.outer(comp, col)

    acc = Jet(0.0, 0.0, 0.0)
    for j, cj in enumerate(coords):
        jet = Jet._coerce(cj)
        col = b[:, j]
        acc = acc + Jet(outer_comp(jet.f0, col), outer_comp(jet.f1, col),
                        outer_comp(jet.f2, col))
    return acc


def embed_fourier(coords: Sequence[float], emb: FourierEmbedding) -> np.ndarray:
    """Fourier features of one point: [cos(2pi Bx x); sin(2pi Bx x); cos(2pi Bt t); sin(2pi Bt t)]."""
    d = emb.b_x.shape[1]
    if len(coords) != d + 1:
        raise DimensionMismatch(f"expected {d + 1} coordinates, got {len(coords)}")
    batch = [np.asarray([c], dtype=np.float64) for c in coords]
    return np.asarray(_embed_batch(batch, emb))[0]


def _embed_batch(coords: Sequence, emb: FourierEmbedding):
    d = emb.b_x.shape[1]
    if len(coords) != d + 1:
        raise DimensionMismatch(f"expected {d + 1} coordinates, got {len(coords)}")
    # 2*pi puts the sampled frequencies in cycles per unit length, the
    # random-Fourier-feature convention; without it the embedding is too
    # smooth on unit-scale coordinates to resolve pit-sized detail.
    ax = _freq_block(coords[:d], (2.0 * np.pi) * emb.b_x)
    at = _freq_block(coords[d:], (2.0 * np.pi) * emb.b_t)
    return ad.concat([ad.cos(ax), ad.sin(ax), ad.cos(at), ad.sin(at)], axis=1)


def _raw_features(coords: Sequence):
    """Raw coordinate features for the no-embedding ablation."""
    if not any(isinstance(cj, Jet) for cj in coords):
        return np.stack([np.asarray(cj, dtype=np.float64) for cj in coords], axis=1)
    n = next(np.asarray(cj.f0 if isinstance(cj, Jet) else cj).shape[0]
             for cj in coords)
    cols = [Jet._coerce(cj) for cj in coords]
    return ad.concat([Jet(_column(c.f0, n), _column(c.f1, n), _column(c.f2, n))
                      for c in cols], axis=1)


def _T(w):
    if isinstance(w, Var):
        return ad.transpose(w)
    return np.asarray(w).T


def forward_modified_mlp(z, arrays, config: NetworkConfig):
    """Backbone: gated hidden stack producing the two raw outputs.

    Gates: U = a(Wu z + bu), V = a(Wv z + bv); per layer the candidate state
    zh = a(W z + b) is blended as zh * U + (1 - zh) * V.  With the gating
    flag off this is a plain tanh MLP.
    """
    if config.modified_mlp:
        u = ad.tanh(ad.matmul(z, _T(arrays["gate_u.w"])) + arrays["gate_u.b"])
        v = ad.tanh(ad.matmul(z, _T(arrays["gate_v.w"])) + arrays["gate_v.b"])
    h = z
    for layer in range(config.m_h):
        zh = ad.tanh(ad.matmul(h, _T(arrays[f"hidden.{layer}.w"]))
                     + arrays[f"hidden.{layer}.b"])
        h = zh * u + (1.0 - zh) * v if config.modified_mlp else zh
    phi_raw = ad.matmul(h, arrays["out.w_phi"]) + arrays["out.b_phi"]
    cl_raw = ad.matmul(h, arrays["out.w_cl"]) + arrays["out.b_cl"]
    return phi_raw, cl_raw


def _sigmoid(x):
    return 0.5 * (ad.tanh(0.5 * x) + 1.0)


def constraint_parts(phi_raw, cl_raw, head: HardConstraintHead):
    """Constrained outputs (phi, c_l, c_s, c).

    phi is squashed into (0, 1); the liquid concentration c_l into
    (0, 1 - c_se + c_le); the solid concentration follows from the fixed
    equilibrium offset and the mixture closes the set.
    """
    phi = 0.5 * ad.tanh(phi_raw) + 0.5
    c_l = (1.0 - head.c_se + head.c_le) * (0.5 * (ad.tanh(cl_raw) + 1.0))
    c_s = c_l + (head.c_se - head.c_le)
    h = interp_h(phi)
    c = h * c_s + (1.0 - h) * c_l
    return phi, c_l, c_s, c


def apply_hard_constraints(phi_raw, cl_raw, head: HardConstraintHead):
    phi, _, _, c = constraint_parts(phi_raw, cl_raw, head)
    return phi, c


def net_forward_batch(coords: Sequence, params: NetworkParams,
                      arrays: dict | None = None):
    """(phi, c) over a batch; coords is one array or jet per axis plus time."""
    arrs = params.arrays if arrays is None else arrays
    cfg = params.config
    if cfg.fourier:
        emb = FourierEmbedding(np.asarray(arrs["fourier.b_x"]),
                               np.asarray(arrs["fourier.b_t"]),
                               cfg.sigma_x, cfg.sigma_t)
        z = _embed_batch(coords, emb)
    else:
        if len(coords) != cfg.dim + 1:
            raise DimensionMismatch(
                f"expected {cfg.dim + 1} coordinates, got {len(coords)}")
        z = _raw_features(coords)
    phi_raw, cl_raw = forward_modified_mlp(z, arrs, cfg)
    if cfg.hard_constraints:
        return apply_hard_constraints(phi_raw, cl_raw, params.head)
    return _sigmoid(phi_raw), _sigmoid(cl_raw)


def net_forward(coords: Sequence[float], params: NetworkParams) -> tuple[float, float]:
    """(phi, c) at a single space-time point."""
    batch = [np.asarray([c], dtype=np.float64) for c in coords]
    phi, c = net_forward_batch(batch, params)
    return float(np.asarray(phi)[0]), float(np.asarray(c)[0])


# ---------------------------------------------------------------------------
# Checkpoints: deterministic flat binary with a JSON header.
# ---------------------------------------------------------------------------

def save_checkpoint(params: NetworkParams, path) -> None:
    names = list(params.arrays)
    header = {
        "format": 1,
        "seed": params.seed,
        "config": dataclasses.asdict(params.config),
        "arrays": [{"name": n, "shape": list(params.arrays[n].shape)}
                   for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params.arrays[n],
                                          dtype="<f8").tobytes())


def load_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").copy()
            arrays[spec["name"]] = data.reshape(shape)
    config = NetworkConfig(**header["config"])
    return NetworkParams(config, header["seed"], arrays)
