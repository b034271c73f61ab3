"""Dissipative Hamiltonian dynamics on the sphere for virtual-outlier synthesis.

Chains start at midpoints between class prototypes and evolve under the global
potential with friction and (optionally tempered) tangent noise.  The split
step is: dissipative momentum update, geodesic slide, parallel transport plus
a half-step force correction at the new point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyParams, EmptyBank, _snap, global_potential, riemannian_grad_U
from .sphere import (
    ANTIPODAL_TOL,
    TangentVector,
    UnitVector,
    geodesic_step,
    normalize,
    project_tangent,
    sample_tangent_gaussian,
    transport,
)

VARIANTS = ("exponential", "euler")
RESAMPLE_ATTEMPTS = 8      # antipodal prototype pairs get this many redraws
FALLBACK_PERTURBATION = 1e-3


class InsufficientPrototypes(ValueError):
    """Chain initialization needs at least two prototypes."""


@dataclass(frozen=True)
class SamplerConfig:
    step_size: float = 0.01
    friction: float = 0.95
    n_rounds: int = 5        # momentum noise is redrawn once per round
    steps_per_round: int = 3
    n_chains: int = 32
    dyn_temperature: float = 0.01
    integrator_variant: str = "exponential"  # "exponential" | "euler"
    noise_per_step: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.friction < 0:
            raise ValueError("friction must be non-negative")
        for name in ("n_rounds", "steps_per_round", "n_chains"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.dyn_temperature <= 0:
            raise ValueError("dyn_temperature must be positive")
        if self.integrator_variant not in VARIANTS:
            raise ValueError(f"integrator_variant must be one of {VARIANTS}")


@dataclass(frozen=True)
class ChainState:
    position: UnitVector
    momentum: TangentVector
    round_index: int = 0
    step_index: int = 0


@dataclass(frozen=True)
class VirtualOutlierSet:
    outliers: list[UnitVector]
    chain_ids: list[int] = field(default_factory=list)
    prototype_pairs: list[tuple[int, int]] = field(default_factory=list)
    potentials: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.outliers)

    def as_array(self) -> np.ndarray:
        if not self.outliers:
            return np.empty((0, 0))
        return np.array([z.coords for z in self.outliers])


def _init_pair(prototypes: list[UnitVector], cfg: SamplerConfig,
               rng: np.random.Generator) -> tuple[ChainState, tuple[int, int]]:
    n = len(prototypes)
    for _ in range(RESAMPLE_ATTEMPTS):
        i, j = rng.choice(n, size=2, replace=False)
        a, b = prototypes[i], prototypes[j]
        if float(np.dot(a.coords, b.coords)) >= -1.0 + ANTIPODAL_TOL:
            pos = normalize(a.coords + b.coords)
            break
    else:
        # every draw was (near-)antipodal: nudge one endpoint tangentially so
        # the midpoint direction is well defined
        u = normalize(sample_tangent_gaussian(a, rng).coords)
        nudged = normalize(a.coords + FALLBACK_PERTURBATION * u.coords)
        pos = normalize(nudged.coords + b.coords)
    momentum = sample_tangent_gaussian(pos, rng)
    return ChainState(pos, momentum), (int(min(i, j)), int(max(i, j)))


def init_chains(prototypes: list[UnitVector], cfg: SamplerConfig,
                rng: np.random.Generator) -> list[ChainState]:
    """One chain per cfg.n_chains, started at the midpoint of a random prototype pair."""
    if len(prototypes) < 2:
        raise InsufficientPrototypes(f"need >= 2 prototypes, got {len(prototypes)}")
    return [_init_pair(prototypes, cfg, rng)[0] for _ in range(cfg.n_chains)]


def dshd_step(state: ChainState, bank, params: EnergyParams, cfg: SamplerConfig,
              rng: np.random.Generator | None = None,
              noise: np.ndarray | None = None) -> ChainState:
    """One split step of the dissipative dynamics.

    `noise`, when given, is a raw ambient Gaussian draw that is projected onto
    the current tangent space (the per-round reuse path); otherwise fresh
    tangent noise is drawn from `rng`.  `bank=None` means a zero potential,
    which the conservation and equipartition tests rely on.
    """
    z, v = state.position, state.momentum
    eps, gam, temp = cfg.step_size, cfg.friction, cfg.dyn_temperature

    grad = riemannian_grad_U(z, bank, params).coords if bank is not None else 0.0
    if noise is not None:
        xi = project_tangent(noise, z).coords
    elif rng is not None:
        xi = sample_tangent_gaussian(z, rng).coords
    else:
        raise ValueError("dshd_step needs an rng when no noise vector is supplied")

    if cfg.integrator_variant == "exponential":
        alpha = np.exp(-gam * eps)      # exact OU damping over one step
        sigma = np.sqrt((1.0 - alpha * alpha) * temp)
    else:
        alpha = 1.0 - gam * eps
        sigma = np.sqrt(2.0 * gam * eps * temp)
    v_half = TangentVector(alpha * v.coords - 0.5 * eps * grad + sigma * xi, z)

    z_new = geodesic_step(z, v_half, eps)
    v_new = transport(v_half, z, z_new).coords
    if bank is not None:
        v_new = v_new - 0.5 * eps * riemannian_grad_U(z_new, bank, params).coords

    step = state.step_index + 1
    rnd = state.round_index
    if step >= cfg.steps_per_round:
        rnd, step = rnd + 1, 0
    return ChainState(z_new, TangentVector(v_new, z_new), rnd, step)


def run_chain(state: ChainState, bank, params: EnergyParams, cfg: SamplerConfig,
              rng: np.random.Generator) -> ChainState:
    """Advance one chain for n_rounds * steps_per_round steps.

    The ambient noise vector is drawn once per round and re-projected at each
    step of the round unless cfg.noise_per_step asks for fresh draws.
    """
    d = state.position.dim
    for _ in range(cfg.n_rounds):
        xi = None
        for _ in range(cfg.steps_per_round):
            if xi is None or cfg.noise_per_step:
                xi = rng.standard_normal(d)
            state = dshd_step(state, bank, params, cfg, noise=xi)
    return state


def synthesize_outliers(bank, prototypes: list[UnitVector],
                        params: EnergyParams, cfg: SamplerConfig) -> VirtualOutlierSet:
    """Run cfg.n_chains independent chains and collect their final positions.

    Each chain owns a SeedSequence child keyed by (cfg.seed, chain index), so
    results do not depend on scheduling order.  No accept/reject step.
    """
    snap = _snap(bank)
    if len(snap) == 0:
        raise EmptyBank("cannot synthesize against an empty bank")
    if len(prototypes) < 2:
        raise InsufficientPrototypes(f"need >= 2 prototypes, got {len(prototypes)}")
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains + 1)
    rng_init = np.random.default_rng(children[0])
    starts = [_init_pair(prototypes, cfg, rng_init) for _ in range(cfg.n_chains)]

    outliers, chain_ids, pairs, potentials = [], [], [], []
    for idx, (state, pair) in enumerate(starts):
        rng = np.random.default_rng(children[idx + 1])
        state = run_chain(state, snap, params, cfg, rng)
        outliers.append(state.position)
        chain_ids.append(idx)
        pairs.append(pair)
        potentials.append(global_potential(state.position, snap, params)[0])
    return VirtualOutlierSet(outliers, chain_ids, pairs, potentials)


def dump_outliers(oset: VirtualOutlierSet, fh) -> None:
    """One JSON object per outlier: {"chain": i, "outlier": [...], "potential": u}."""
    for i, z, u in zip(oset.chain_ids, oset.outliers, oset.potentials):
        fh.write(json.dumps({"chain": int(i),
                             "outlier": [float(x) for x in z.coords],
                             "potential": float(u)}) + "\n")
