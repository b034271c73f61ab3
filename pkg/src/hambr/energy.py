"""Free-energy landscape over a class-keyed bank of unit features.

The per-class free energy is a soft minimum of similarity distances to the K
nearest bank entries; the global potential is the minimum over classes.  Low
potential means "close to some class"; ridges between classes are where the
sampler is supposed to deposit virtual outliers.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .sphere import TangentVector, UnitVector, project_tangent

DEFAULT_CAPACITY = 256


class EmptyClass(ValueError):
    """Requested class has no bank entries."""


class ZeroMass(ValueError):
    """All selected neighbors carry zero weight."""


class EmptyBank(ValueError):
    """Bank has no entries at all."""


@dataclass(frozen=True)
class BankEntry:
    feature: UnitVector
    weight: float
    class_id: int

    def __post_init__(self):
        if not (0.0 <= self.weight <= 1.0):
            raise ValueError(f"weight must be in [0, 1], got {self.weight!r}")
        if self.class_id < 0:
            raise ValueError("class_id must be non-negative")


class BankSnapshot:
    """Immutable per-class view: feature matrices and weight vectors.

    Energy queries run against snapshots so a concurrent writer cannot change
    the neighbor set mid-query.
    """

    def __init__(self, groups: dict[int, tuple[np.ndarray, np.ndarray]]):
        self._groups = groups
        self.classes = sorted(groups)

    def features(self, class_id: int) -> np.ndarray:
        return self._groups[class_id][0]

    def weights(self, class_id: int) -> np.ndarray:
        return self._groups[class_id][1]

    def size(self, class_id: int) -> int:
        return self._groups[class_id][0].shape[0]

    def __contains__(self, class_id: int) -> bool:
        return class_id in self._groups

    def __len__(self) -> int:
        return sum(g[0].shape[0] for g in self._groups.values())


class FeatureBank:
    """Mutable bank with per-class FIFO eviction at a fixed capacity."""

    def __init__(self, capacity_per_class: int = DEFAULT_CAPACITY):
        if capacity_per_class < 1:
            raise ValueError("capacity_per_class must be >= 1")
        self.capacity_per_class = capacity_per_class
        self._groups: dict[int, deque[BankEntry]] = {}
        self._snapshot: BankSnapshot | None = None

    def add(self, entry: BankEntry) -> None:
        group = self._groups.get(entry.class_id)
        if group is None:
            group = deque(maxlen=self.capacity_per_class)
            self._groups[entry.class_id] = group
        group.append(entry)  # deque drops the oldest entry once full
        self._snapshot = None

    def extend(self, entries) -> None:
        for entry in entries:
            self.add(entry)

    def classes(self) -> list[int]:
        return sorted(c for c, g in self._groups.items() if g)

    def entries(self, class_id: int) -> list[BankEntry]:
        return list(self._groups.get(class_id, ()))

    def __len__(self) -> int:
        return sum(len(g) for g in self._groups.values())

    def snapshot(self) -> BankSnapshot:
        if self._snapshot is None:
            groups = {}
            for c, g in self._groups.items():
                if not g:
                    continue
                feats = np.array([e.feature.coords for e in g])
                weights = np.array([e.weight for e in g])
                feats.flags.writeable = False
                weights.flags.writeable = False
                groups[c] = (feats, weights)
            self._snapshot = BankSnapshot(groups)
        return self._snapshot


def _snap(bank) -> BankSnapshot:
    return bank if isinstance(bank, BankSnapshot) else bank.snapshot()


@dataclass(frozen=True)
class EnergyParams:
    tau_energy: float = 0.1
    k_neighbors: int = 16  # capped at class size when the class is smaller

    def __post_init__(self):
        if self.tau_energy <= 0:
            raise ValueError("tau_energy must be positive")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")


def _select_neighbors(snap: BankSnapshot, z: np.ndarray, class_id: int,
                      params: EnergyParams) -> tuple[np.ndarray, np.ndarray]:
    """Similarities and weights of the top-K entries of one class."""
    if class_id not in snap or snap.size(class_id) == 0:
        raise EmptyClass(f"class {class_id} has no entries")
    sims = snap.features(class_id) @ z
    weights = snap.weights(class_id)
    k = min(params.k_neighbors, sims.size)
    if k < sims.size:
        idx = np.argpartition(-sims, k - 1)[:k]
        sims, weights = sims[idx], weights[idx]
    if not np.any(weights > 0):
        raise ZeroMass(f"all selected weights are zero for class {class_id}")
    return sims, weights


def _free_energy(sims: np.ndarray, weights: np.ndarray, tau: float) -> float:
    live = weights > 0
    s, w = sims[live], weights[live]
    m = float(np.max(s))
    return -(m + tau * float(np.log(np.sum(w * np.exp((s - m) / tau)))))


def class_free_energy(z: UnitVector, bank, class_id: int,
                      params: EnergyParams = EnergyParams()) -> float:
    """-tau * log sum_j w_j exp(<z, k_j>/tau) over the K nearest entries of one class."""
    sims, weights = _select_neighbors(_snap(bank), z.coords, class_id, params)
    return _free_energy(sims, weights, params.tau_energy)


def global_potential(z: UnitVector, bank,
                     params: EnergyParams = EnergyParams()) -> tuple[float, int]:
    """Minimum class free energy and its argmin class (ties -> smallest id)."""
    snap = _snap(bank)
    if not snap.classes:
        raise EmptyBank("bank has no entries")
    best: tuple[float, int] | None = None
    for c in snap.classes:
        e = class_free_energy(z, snap, c, params)
        if best is None or e < best[0]:
            best = (e, c)
    return best


def riemannian_grad_U(z: UnitVector, bank,
                      params: EnergyParams = EnergyParams()) -> TangentVector:
    """Tangent gradient of the global potential at z.

    The neighbor set of the argmin class is treated as locally constant, so the
    Euclidean gradient is -sum_j s_j k_j with s_j the weighted softmax of the
    selected similarities.
    """
    snap = _snap(bank)
    _, c = global_potential(z, snap, params)
    feats = snap.features(c)
    sims = feats @ z.coords
    weights = snap.weights(c)
    k = min(params.k_neighbors, sims.size)
    if k < sims.size:
        idx = np.argpartition(-sims, k - 1)[:k]
        sims, weights, feats = sims[idx], weights[idx], feats[idx]
    live = weights > 0  # zero-weight entries contribute nothing
    sims, weights, feats = sims[live], weights[live], feats[live]
    raw = weights * np.exp((sims - np.max(sims)) / params.tau_energy)
    s = raw / np.sum(raw)
    return project_tangent(-(s @ feats), z)


def potential_batch(points: np.ndarray, bank,
                    params: EnergyParams = EnergyParams()) -> np.ndarray:
    """Global potential for each row of `points`; same math as global_potential."""
    snap = _snap(bank)
    if not snap.classes:
        raise EmptyBank("bank has no entries")
    points = np.asarray(points, dtype=np.float64)
    tau = params.tau_energy
    energies = np.full((points.shape[0], len(snap.classes)), np.inf)
    for j, c in enumerate(snap.classes):
        sims = points @ snap.features(c).T          # (n, m_c)
        weights = snap.weights(c)
        k = min(params.k_neighbors, sims.shape[1])
        if k < sims.shape[1]:
            idx = np.argpartition(-sims, k - 1, axis=1)[:, :k]
            sel = np.take_along_axis(sims, idx, axis=1)
            w = weights[idx]
        else:
            sel, w = sims, np.broadcast_to(weights, sims.shape)
        masked = np.where(w > 0, sel, -np.inf)  # exp(-inf) = 0 drops dead weights
        if not np.all(np.any(w > 0, axis=1)):
            raise ZeroMass(f"all selected weights are zero for class {c}")
        m = np.max(masked, axis=1, keepdims=True)
        lse = m[:, 0] + tau * np.log(np.sum(w * np.exp((masked - m) / tau), axis=1))
        energies[:, j] = -lse
    return np.min(energies, axis=1)


def dump_bank(bank, fh) -> None:
    """One JSON object per entry: {"class": c, "weight": w, "feature": [...]}."""
    if isinstance(bank, FeatureBank):
        items = [(c, e.weight, e.feature.coords) for c in bank.classes()
                 for e in bank.entries(c)]
    else:
        snap = _snap(bank)
        items = [(c, float(w), f) for c in snap.classes
                 for f, w in zip(snap.features(c), snap.weights(c))]
    for c, w, f in items:
        fh.write(json.dumps({"class": int(c), "weight": float(w),
                             "feature": [float(x) for x in f]}) + "\n")


def load_bank(fh, capacity_per_class: int = DEFAULT_CAPACITY) -> FeatureBank:
    bank = FeatureBank(capacity_per_class)
    for line in fh:
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        bank.add(BankEntry(UnitVector(np.asarray(row["feature"], dtype=np.float64)),
                           float(row["weight"]), int(row["class"])))
    return bank
