"""Reference policies: static, tabular Q-learning, tabular actor-critic, SOTA bound.

The tabular actor-critic is a TACT-style stand-in: TACT's transfer-learning
component is not implemented.
"""

from __future__ import annotations

import numpy as np

from .agent import all_actions, reference_cost
from .config import ScenarioConfig
from .env import HetNetEnv, Topology, slot_costs
from .nn import LinearSchedule

SOTA_MAX_SBS = 20


class TooLarge(ValueError):
    pass


def quantize(lam, bins: int, lam_hi: float) -> int:
    """Equal-width bin index per BS over ``[0, lam_hi]``, packed base ``bins``."""
    lam = np.asarray(lam, dtype=float)
    idx = np.floor(bins * np.minimum(lam, lam_hi) / lam_hi).astype(int)
    idx = np.clip(idx, 0, bins - 1)
    key = 0
    for b in idx[::-1]:
        key = key * bins + int(b)
    return key


def unpack_key(key: int, n: int, bins: int) -> list[int]:
    out = []
    for _ in range(n):
        key, r = divmod(key, bins)
        out.append(r)
    return out


def boltzmann_probs(values, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    v = np.asarray(values, dtype=float)
    z = -(v - v.min()) / temperature
    p = np.exp(z)
    return p / p.sum()


def boltzmann_select(values, temperature: float, rng: np.random.Generator) -> int:
    """Sample an index with probability proportional to ``exp(-value / T)``."""
    p = boltzmann_probs(values, temperature)
    # inverse-CDF draw; one uniform per call keeps streams aligned
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(idx, len(p) - 1)


def index_to_action(a: int, n_sbs: int) -> np.ndarray:
    return ((a >> np.arange(n_sbs)) & 1).astype(float)


def action_to_index(v) -> int:
    bits = np.asarray(v).astype(int)
    return int((bits << np.arange(len(bits))).sum())


class SparseTable:
    """``(state, action) -> value`` with implicit zeros for unvisited pairs."""

    def __init__(self, n_actions: int):
        self.n_actions = n_actions
        self.rows: dict[int, dict[int, float]] = {}

    def get(self, s: int, a: int) -> float:
        return self.rows.get(s, {}).get(a, 0.0)

    def set(self, s: int, a: int, value: float) -> None:
        self.rows.setdefault(s, {})[a] = value

    def row(self, s: int) -> np.ndarray:
        out = np.zeros(self.n_actions)
        for a, q in self.rows.get(s, {}).items():
            out[a] = q
        return out

    def row_min(self, s: int) -> float:
        entries = self.rows.get(s)
        if not entries:
            return 0.0
        m = min(entries.values())
        return m if len(entries) == self.n_actions else min(m, 0.0)

    def n_pairs(self) -> int:
        return sum(len(r) for r in self.rows.values())

    def n_states(self) -> int:
        return len(self.rows)


def ql_update(table: SparseTable, s: int, a: int, c: float, s_next: int, alpha: float, gamma: float) -> None:
    q = table.get(s, a)
    target = c + gamma * table.row_min(s_next)
    table.set(s, a, q + alpha * (target - q))


class _Tabular:
    """Shared plumbing: quantised previous-slot arrivals as the state."""

    def __init__(self, config: ScenarioConfig, topology: Topology, rng: np.random.Generator | None = None,
                 seed=None, bins: int = 5, temperature=(1.0, 0.05), horizon: int = 10000,
                 freeze_day: int = 10, cost_scale: float | None = None):
        self.config = config
        self.topology = topology
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.bins = bins
        self.n_sbs = config.n_sbs
        self.n_actions = 2 ** config.n_sbs
        self.temperature = LinearSchedule(temperature[0], temperature[1], horizon)
        self.freeze_slot = freeze_day * config.slots_per_day
        self.cost_scale = cost_scale or reference_cost(config, topology)
        self.lam_max = 0.0
        self.lam_hi = 1.0
        self.last_lam = np.zeros(config.n_bs)
        self.t = 0
        self.states_seen: set[int] = set()

    def state_key(self, lam) -> int:
        return quantize(lam, self.bins, self.lam_hi)

    def _observe_range(self, lam) -> None:
        if self.t < self.freeze_slot:
            self.lam_max = max(self.lam_max, float(np.max(lam)))
            if self.lam_max > 0:
                self.lam_hi = 1.25 * self.lam_max

    def visit_stats(self) -> dict:
        n_state_space = float(self.bins) ** self.config.n_bs
        pairs = self.pair_count()
        return {
            "visited_states": len(self.states_seen),
            "visited_pairs": pairs,
            "state_fraction": len(self.states_seen) / n_state_space,
            "pair_fraction": pairs / (n_state_space * self.n_actions),
        }

    def pair_count(self) -> int:
        raise NotImplementedError

    def run_slot(self, env: HetNetEnv) -> dict:
        s = self.state_key(self.last_lam)
        self.states_seen.add(s)
        a = self.choose(s)
        v = index_to_action(a, self.n_sbs)
        cost, lam = env.step(v)
        self._observe_range(lam)
        s_next = self.state_key(lam)
        self.learn(s, a, cost.total / self.cost_scale, s_next)
        self.last_lam = lam
        rec = {"slot": self.t, "action": v, "arrivals": lam, "cost": cost}
        self.t += 1
        return rec


class QLearningAgent(_Tabular):
    kind = "ql"

    def __init__(self, *args, alpha: float = 0.1, **kwargs):
        super().__init__(*args, **kwargs)
        self.alpha = alpha
        self.q = SparseTable(self.n_actions)

    def choose(self, s: int) -> int:
        return boltzmann_select(self.q.row(s), self.temperature.value(self.t), self.rng)

    def learn(self, s, a, c, s_next) -> None:
        ql_update(self.q, s, a, c, s_next, self.alpha, self.config.gamma)

    def pair_count(self) -> int:
        return self.q.n_pairs()


class TabularActorCritic(_Tabular):
    """TACT-style actor-critic: state values plus cost-oriented action preferences."""

    kind = "tact_style"

    def __init__(self, *args, alpha_v: float = 0.1, alpha_p: float = 0.1, **kwargs):
        super().__init__(*args, **kwargs)
        self.alpha_v = alpha_v
        self.alpha_p = alpha_p
        self.value: dict[int, float] = {}
        self.pref = SparseTable(self.n_actions)

    def policy(self, s: int) -> np.ndarray:
        return boltzmann_probs(self.pref.row(s), self.temperature.value(self.t))

    def choose(self, s: int) -> int:
        return boltzmann_select(self.pref.row(s), self.temperature.value(self.t), self.rng)

    def learn(self, s, a, c, s_next) -> None:
        td = c + self.config.gamma * self.value.get(s_next, 0.0) - self.value.get(s, 0.0)
        self.value[s] = self.value.get(s, 0.0) + self.alpha_v * td
        self.pref.set(s, a, self.pref.get(s, a) + self.alpha_p * td)

    def pair_count(self) -> int:
        return self.pref.n_pairs()


def sota_action(lam_true, topo: Topology, config: ScenarioConfig, candidates: np.ndarray | None = None) -> np.ndarray:
    """Exhaustive minimiser of energy + delay for known arrivals (switching ignored)."""
    if config.n_sbs > SOTA_MAX_SBS:
        raise TooLarge(f"exhaustive search limited to {SOTA_MAX_SBS} SBSs")
    if candidates is None:
        candidates = all_actions(config.n_sbs)
    e, d, _ = slot_costs(lam_true, np.ones(config.n_sbs), candidates, topo, config)
    return candidates[int(np.argmin(e + d))].copy()


class SotaPolicy:
    kind = "sota"

    def __init__(self, config: ScenarioConfig, topology: Topology, **_):
        self.config = config
        self.topology = topology
        self.candidates = all_actions(config.n_sbs) if config.n_sbs <= SOTA_MAX_SBS else None
        if self.candidates is None:
            raise TooLarge(f"exhaustive search limited to {SOTA_MAX_SBS} SBSs")
        self.t = 0

    def run_slot(self, env: HetNetEnv) -> dict:
        lam = env.peek_arrivals()
        v = sota_action(lam, self.topology, self.config, self.candidates)
        cost, lam = env.step(v)
        rec = {"slot": self.t, "action": v, "arrivals": lam, "cost": cost}
        self.t += 1
        return rec


def static_policy(kind: str, n_sbs: int) -> np.ndarray:
    if kind == "all_on":
        return np.ones(n_sbs)
    if kind == "all_off":
        return np.zeros(n_sbs)
    raise ValueError(f"unknown static policy {kind!r}")


class StaticPolicy:
    def __init__(self, config: ScenarioConfig, topology: Topology, kind: str = "all_on", **_):
        self.kind = kind
        self.v = static_policy(kind, config.n_sbs)
        self.t = 0

    def run_slot(self, env: HetNetEnv) -> dict:
        cost, lam = env.step(self.v)
        rec = {"slot": self.t, "action": self.v.copy(), "arrivals": lam, "cost": cost}
        self.t += 1
        return rec
