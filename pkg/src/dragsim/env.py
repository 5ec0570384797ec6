"""HetNet simulator with OU-noised daily traffic and per-slot costs.

All arrival and load vectors are ordered MBSs first, then SBSs. Mode vectors
cover SBSs only. The cost functions accept a stack of mode vectors
(shape ``(..., n_sbs)``) so that exhaustive searches reuse the exact same
arithmetic as single evaluations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ScenarioConfig


class PlacementFailed(RuntimeError):
    """The hard-core placement ran out of retries (request too dense)."""


@dataclass
class Topology:
    mbs_positions: np.ndarray  # (n_mbs, 2)
    sbs_positions: np.ndarray  # (n_sbs, 2)
    sbs_parent: np.ndarray  # (n_sbs,) int

    @property
    def n_mbs(self) -> int:
        return len(self.mbs_positions)

    @property
    def n_sbs(self) -> int:
        return len(self.sbs_positions)

    def parent_matrix(self) -> np.ndarray:
        """One-hot ``(n_mbs, n_sbs)`` matrix of SBS -> covering MBS."""
        mat = np.zeros((self.n_mbs, self.n_sbs))
        mat[self.sbs_parent, np.arange(self.n_sbs)] = 1.0
        return mat


def _mbs_layout(n_mbs: int, radius: float) -> np.ndarray:
    if n_mbs == 1:
        return np.zeros((1, 2))
    # MBSs on a ring, neighbours one radius apart along the chord
    ring = radius / (2 * np.sin(np.pi / n_mbs)) if n_mbs > 2 else radius / 2
    ang = 2 * np.pi * np.arange(n_mbs) / n_mbs
    return np.column_stack([ring * np.cos(ang), ring * np.sin(ang)])


def generate_topology(config: ScenarioConfig, rng: np.random.Generator) -> Topology:
    """Place SBSs by sequential hard-core rejection inside the MBS discs.

    Each SBS picks a parent MBS uniformly, then a uniform point in that
    MBS's disc is proposed until it keeps ``sbs_min_dist_m`` from every
    SBS placed so far. ``placement_retries`` bounds the total number of
    rejected proposals.
    """
    mbs = _mbs_layout(config.n_mbs, config.mbs_radius_m)
    pts = np.empty((config.n_sbs, 2))
    parents = np.empty(config.n_sbs, dtype=int)
    rejected = 0
    placed = 0
    while placed < config.n_sbs:
        parent = int(rng.integers(config.n_mbs))
        r = config.mbs_radius_m * np.sqrt(rng.random())
        phi = 2 * np.pi * rng.random()
        cand = mbs[parent] + r * np.array([np.cos(phi), np.sin(phi)])
        if placed:
            d = np.linalg.norm(pts[:placed] - cand, axis=1)
            if d.min() < config.sbs_min_dist_m:
                rejected += 1
                if rejected > config.placement_retries:
                    raise PlacementFailed(
                        f"placed {placed} of {config.n_sbs} SBSs before "
                        f"{config.placement_retries} rejections"
                    )
                continue
        pts[placed] = cand
        parents[placed] = parent
        placed += 1
    return Topology(mbs_positions=mbs, sbs_positions=pts, sbs_parent=parents)


# -- traffic ----------------------------------------------------------------

def _base_profile(slots_per_day: int) -> np.ndarray:
    hours = 24.0 * np.arange(slots_per_day) / slots_per_day

    def bump(center, width):
        d = np.abs(hours - center)
        d = np.minimum(d, 24.0 - d)
        return np.exp(-((d / width) ** 2))

    raw = 0.55 * bump(12.0, 3.0) + bump(20.5, 2.5) + 0.1 * bump(16.0, 4.0)
    lo, hi = raw.min(), raw.max()
    return 0.1 + 0.9 * (raw - lo) / (hi - lo)


BASE_PATTERN = _base_profile(48)


def default_base_pattern(slot: int) -> float:
    """Synthetic double-peak daily profile (noon and evening peaks).

    Values span [0.1, 1.0]: the night trough is exactly 0.1 and the evening
    peak exactly 1.0.
    """
    if not 0 <= slot < 48:
        raise IndexError(f"slot {slot} outside [0, 48)")
    return float(BASE_PATTERN[slot])


@dataclass
class TrafficModel:
    base_pattern: np.ndarray
    scale: np.ndarray  # (n_sbs,)
    shift: np.ndarray  # (n_sbs,) int
    mbs_own_scale: float = 1.0
    n_mbs: int = 1
    ou_theta: float = 0.05
    ou_sigma: float = 0.03
    ou_state: np.ndarray = field(default=None)  # (n_mbs + n_sbs,)
    scale_range: tuple[float, float] = (0.6, 1.0)
    shift_range: tuple[int, int] = (-8, 8)

    def __post_init__(self):
        self.base_pattern = np.asarray(self.base_pattern, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        self.shift = np.asarray(self.shift, dtype=int)
        if self.ou_state is None:
            self.ou_state = np.zeros(self.n_mbs + len(self.scale))
        if np.any(self.base_pattern < 0) or np.any(self.base_pattern > 1):
            raise ValueError("base pattern values must lie in [0, 1]")

    @property
    def n_bs(self) -> int:
        return self.n_mbs + len(self.scale)

    @classmethod
    def from_config(cls, config: ScenarioConfig, rng: np.random.Generator) -> "TrafficModel":
        base = BASE_PATTERN if config.slots_per_day == 48 else _base_profile(config.slots_per_day)
        model = cls(
            base_pattern=base,
            scale=np.ones(config.n_sbs),
            shift=np.zeros(config.n_sbs, dtype=int),
            mbs_own_scale=config.mbs_own_scale,
            n_mbs=config.n_mbs,
            ou_theta=config.ou_theta,
            ou_sigma=config.ou_sigma,
            scale_range=(config.scale_low, config.scale_high),
            shift_range=(-config.shift_max, config.shift_max),
        )
        return pattern_shift(model, rng)

    def copy(self) -> "TrafficModel":
        return TrafficModel(
            base_pattern=self.base_pattern.copy(),
            scale=self.scale.copy(),
            shift=self.shift.copy(),
            mbs_own_scale=self.mbs_own_scale,
            n_mbs=self.n_mbs,
            ou_theta=self.ou_theta,
            ou_sigma=self.ou_sigma,
            ou_state=self.ou_state.copy(),
            scale_range=self.scale_range,
            shift_range=self.shift_range,
        )


def pattern_shift(model: TrafficModel, rng: np.random.Generator) -> TrafficModel:
    """Return a copy with freshly drawn per-SBS scales and shifts."""
    out = model.copy()
    n = len(out.scale)
    lo, hi = out.scale_range
    out.scale = lo + (hi - lo) * rng.random(n)
    s_lo, s_hi = out.shift_range
    out.shift = rng.integers(s_lo, s_hi + 1, size=n)
    return out


def ou_step(state: np.ndarray, theta: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return state - theta * state + sigma * rng.standard_normal(state.shape)


def sample_arrivals(model: TrafficModel, slot: int, rng: np.random.Generator) -> np.ndarray:
    """Advance the OU noise one step and return the arrival vector for ``slot``."""
    model.ou_state = ou_step(model.ou_state, model.ou_theta, model.ou_sigma, rng)
    period = len(model.base_pattern)
    noise = model.ou_state
    m = model.n_mbs
    lam = np.empty(model.n_bs)
    lam[:m] = model.mbs_own_scale * model.base_pattern[slot % period] * (1.0 + noise[:m])
    idx = (slot + model.shift) % period
    lam[m:] = model.scale * model.base_pattern[idx] * (1.0 + noise[m:])
    return np.maximum(lam, 0.0)


# -- cost model ---------------------------------------------------------------

def _rowsum(x: np.ndarray) -> np.ndarray:
    # fixed left-to-right order, so a vector costs the same alone or in a batch
    acc = np.zeros(x.shape[:-1])
    for j in range(x.shape[-1]):
        acc = acc + x[..., j]
    return acc


def offered_traffic(arrivals, modes, topo: Topology) -> np.ndarray:
    """Uncapped offered traffic per BS, in each BS's own capacity units.

    A sleeping SBS hands its whole arrival rate to its parent MBS.
    """
    arrivals = np.asarray(arrivals, dtype=float)
    modes = np.asarray(modes, dtype=float)
    m = topo.n_mbs
    lam_s = arrivals[m:]
    asleep = (1.0 - modes) * lam_s
    out = np.empty(modes.shape[:-1] + (len(arrivals),))
    for k in range(m):
        out[..., k] = arrivals[k] + _rowsum(asleep[..., topo.sbs_parent == k])
    out[..., m:] = modes * lam_s
    return out


def compute_load(arrivals, modes, topo: Topology, config: ScenarioConfig) -> np.ndarray:
    """Per-BS load in [0, load_cap]; MBS traffic is divided by the capacity ratio."""
    off = offered_traffic(arrivals, modes, topo)
    m = topo.n_mbs
    off[..., :m] /= config.capacity_ratio
    return np.minimum(off, config.load_cap)


def energy(loads, modes, config: ScenarioConfig, n_mbs: int = 1) -> np.ndarray:
    loads = np.asarray(loads, dtype=float)
    modes = np.asarray(modes, dtype=float)
    rho_m, rho_s = loads[..., :n_mbs], loads[..., n_mbs:]
    sbs = modes * (config.sbs_const_power + rho_s * config.sbs_load_power)
    sbs = sbs + (1.0 - modes) * config.sbs_sleep_power
    mbs = config.mbs_const_power + rho_m * config.mbs_load_power
    return _rowsum(sbs) + _rowsum(mbs)


def delay_cost(loads, config: ScenarioConfig) -> np.ndarray:
    loads = np.asarray(loads, dtype=float)
    return config.beta_d * _rowsum(loads / (1.0 - loads))


def switching_cost(prev, nxt, config: ScenarioConfig) -> np.ndarray:
    prev = np.asarray(prev, dtype=float)
    nxt = np.asarray(nxt, dtype=float)
    return config.beta_s * _rowsum(np.maximum(nxt - prev, 0.0))


@dataclass(frozen=True)
class CostBreakdown:
    energy: float
    delay_cost: float
    switching_cost: float

    @property
    def total(self) -> float:
        return self.energy + self.delay_cost + self.switching_cost


def slot_costs(arrivals, prev_modes, modes, topo: Topology, config: ScenarioConfig):
    """Vectorised ``(energy, delay, switching)`` for one or many mode vectors."""
    loads = compute_load(arrivals, modes, topo, config)
    e = energy(loads, modes, config, topo.n_mbs)
    d = delay_cost(loads, config)
    s = switching_cost(prev_modes, modes, config)
    return e, d, s


def slot_cost(arrivals, prev_modes, modes, topo: Topology, config: ScenarioConfig) -> CostBreakdown:
    e, d, s = slot_costs(arrivals, prev_modes, np.asarray(modes, dtype=float)[None, :], topo, config)
    return CostBreakdown(float(e[0]), float(d[0]), float(s[0]))


class HetNetEnv:
    """Step-based environment.

    Traffic is driven by its own generator, so the arrival sequence is a
    function of the seed alone and never of the actions taken; two policies
    run on equal seeds see identical traces.
    """

    def __init__(self, config: ScenarioConfig, topology: Topology, traffic: TrafficModel,
                 rng: np.random.Generator, shift_every_days: int | None = None):
        self.config = config
        self.topology = topology
        self.traffic = traffic
        self.rng = rng
        self.shift_every_days = shift_every_days
        self.slot = 0
        self.prev_modes = np.ones(config.n_sbs)
        self._pending: np.ndarray | None = None

    @classmethod
    def from_seed(cls, config: ScenarioConfig, seed, shift_every_days: int | None = None) -> "HetNetEnv":
        topo_seq, traffic_seq = np.random.SeedSequence(seed).spawn(2)
        topo = generate_topology(config, np.random.default_rng(topo_seq))
        rng = np.random.default_rng(traffic_seq)
        traffic = TrafficModel.from_config(config, rng)
        return cls(config, topo, traffic, rng, shift_every_days)

    @property
    def n_sbs(self) -> int:
        return self.config.n_sbs

    def _maybe_shift(self) -> None:
        every = self.shift_every_days
        if every and self.slot > 0 and self.slot % (every * self.config.slots_per_day) == 0:
            self.traffic = pattern_shift(self.traffic, self.rng)

    def peek_arrivals(self) -> np.ndarray:
        """Arrivals of the upcoming slot (noncausal; used only by the SOTA bound)."""
        if self._pending is None:
            self._maybe_shift()
            self._pending = sample_arrivals(self.traffic, self.slot, self.rng)
        return self._pending.copy()

    def step(self, action) -> tuple[CostBreakdown, np.ndarray]:
        action = np.asarray(action, dtype=float)
        if action.shape != (self.n_sbs,) or not np.all((action == 0) | (action == 1)):
            raise ValueError("action must be a binary vector of length n_sbs")
        lam = self.peek_arrivals()
        self._pending = None
        cost = slot_cost(lam, self.prev_modes, action, self.topology, self.config)
        self.prev_modes = action.copy()
        self.slot += 1
        return cost, lam


def generate_trace(config: ScenarioConfig, seed, n_slots: int, shift_every_days: int | None = None) -> np.ndarray:
    env = HetNetEnv.from_seed(config, seed, shift_every_days)
    out = np.empty((n_slots, config.n_bs))
    for t in range(n_slots):
        out[t] = env.peek_arrivals()
        env.step(np.ones(config.n_sbs))
    return out


def export_trace_csv(trace: np.ndarray, path: str | Path) -> None:
    """Write a ``(slots, B)`` arrival array as ``slot,bs_index,lambda`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "bs_index", "lambda"])
        for t, row in enumerate(trace):
            for i, lam in enumerate(row):
                w.writerow([t, i, repr(float(lam))])
