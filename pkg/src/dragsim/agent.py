"""DRAG agent: AR predictor, cost estimator, actor/critic and action refinement.

Costs enter the CEN and critic losses divided by ``cost_scale`` (see
:func:`reference_cost`); everything logged stays in raw units.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .env import BASE_PATTERN, HetNetEnv, Topology, slot_costs
from .nn import OPTIMIZERS, LinearSchedule, Mlp, grad_inverse, soft_update

HIDDEN = (200, 100)


class InsufficientSamples(RuntimeError):
    pass


class ReplayMemory:
    """Fixed-capacity FIFO of records stored column-wise in numpy arrays."""

    def __init__(self, capacity: int, widths: dict[str, int]):
        self.capacity = capacity
        self.widths = dict(widths)
        self._data = {k: np.zeros((capacity, w)) for k, w in widths.items()}
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, **record) -> None:
        i = self._next
        for k, arr in self._data.items():
            arr[i] = record[k]
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        start = (self._next - self._size) % self.capacity
        return (start + np.arange(self._size)) % self.capacity

    def records(self) -> dict[str, np.ndarray]:
        """All stored records, oldest first."""
        idx = self._order()
        return {k: arr[idx].copy() for k, arr in self._data.items()}

    def sample(self, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        if self._size < n:
            raise InsufficientSamples(f"need {n} records, have {self._size}")
        # uniform with replacement, over the filled part of the ring
        idx = rng.integers(0, self._size, size=n)
        return {k: arr[idx] for k, arr in self._data.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"{k}": arr for k, arr in self._data.items()}
        out["_meta"] = np.array([self._next, self._size, self.capacity])
        return out

    def load_state_dict(self, arrays: dict) -> None:
        self._next, self._size, self.capacity = (int(x) for x in arrays["_meta"])
        for k in self._data:
            self._data[k] = np.array(arrays[k])


class ArHistory:
    """The last ``h`` arrival vectors, zero-padded until warm."""

    def __init__(self, h: int, n_bs: int):
        self.h = h
        self.buf = np.zeros((h, n_bs))
        self.count = 0

    def push(self, lam: np.ndarray) -> None:
        self.buf[:-1] = self.buf[1:]
        self.buf[-1] = lam
        self.count += 1

    @property
    def warm(self) -> bool:
        return self.count >= self.h

    def flat(self) -> np.ndarray:
        return self.buf.reshape(-1).copy()


@dataclass
class DragConfig:
    history: int = 4
    memory: int = 6000
    batch: int = 64
    distance: int = 1
    tau: float = 1e-4
    k_train: int = 5
    width_scale: float = 1.0
    horizon: int = 10000
    sigma_n: tuple[float, float] = (0.5, 0.05)
    epsilon: tuple[float, float] = (3.0, 0.1)
    lr_actor: tuple[float, float] = (5e-3, 8e-4)
    lr_critic: tuple[float, float] = (2e-3, 2e-4)
    lr_arp: tuple[float, float] = (2e-3, 2e-4)
    lr_cen: tuple[float, float] = (2e-3, 2e-4)
    refine: bool = True
    optimizer: str = "adam"
    arp_scale: float = 1.5
    cost_scale: float | None = None

    def schedules(self) -> dict[str, LinearSchedule]:
        names = ("sigma_n", "epsilon", "lr_actor", "lr_critic", "lr_arp", "lr_cen")
        return {n: LinearSchedule(*getattr(self, n), self.horizon) for n in names}


def hidden_sizes(width_scale: float) -> tuple[int, int]:
    return tuple(max(1, int(round(width_scale * w))) for w in HIDDEN)


def build_networks(n_bs: int, n_sbs: int, h: int, width_scale: float, rng: np.random.Generator) -> dict[str, Mlp]:
    """The four networks of the agent, with the activation layout of each."""
    h1, h2 = hidden_sizes(width_scale)
    bn = [True, True, False]
    nets = {
        "arp": Mlp.build([h * n_bs, h1, h2, n_bs], ["tanh", "tanh", "sigmoid"], bn, rng),
        "cen": Mlp.build([n_bs + 2 * n_sbs, h1, h2, 1], ["tanh", "tanh", "sigmoid"], bn, rng),
        "actor": Mlp.build([n_bs + n_sbs, h1, h2, n_sbs], ["softplus", "relu", "shifted_tanh"], bn, rng),
        "critic": Mlp.build([n_bs + 2 * n_sbs, h1, h2, 1], ["softplus", "relu", "linear"], bn, rng),
    }
    return nets


def reference_cost(config: ScenarioConfig, topo: Topology) -> float:
    """All-on slot cost at the busiest slot of the noise-free mid-scale pattern.

    Used to bring learning targets to order one.
    """
    mid = 0.5 * (config.scale_low + config.scale_high)
    peak = float(BASE_PATTERN.max()) if config.slots_per_day == 48 else 1.0
    lam = np.concatenate([np.full(config.n_mbs, config.mbs_own_scale * peak), np.full(config.n_sbs, mid * peak)])
    on = np.ones((1, config.n_sbs))
    e, d, _ = slot_costs(lam, on[0], on, topo, config)
    return float(e[0] + d[0])


def proto_action(v_tilde, sigma_n: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian-perturb, clamp to [0, 1] and round (0.5 rounds up)."""
    v = np.asarray(v_tilde, dtype=float)
    if sigma_n > 0:
        v = v + sigma_n * rng.standard_normal(v.shape)
    v = np.clip(v, 0.0, 1.0)
    return (v >= 0.5).astype(float)


def _order_key(v: np.ndarray) -> tuple[int, int]:
    bits = v.astype(int)
    return int(bits.sum()), int((bits << np.arange(len(bits))).sum())


def sort_actions(actions: np.ndarray) -> np.ndarray:
    """Order candidates by number of active SBSs, then by ``sum_i v_i 2^i``.

    ``argmin`` over the sorted stack then realises the tie-break rule.
    """
    keys = [_order_key(v) for v in actions]
    return actions[sorted(range(len(actions)), key=keys.__getitem__)]


def neighborhood(v_hat, distance: int) -> np.ndarray:
    """All binary vectors within Hamming distance ``distance`` of ``v_hat``."""
    v_hat = np.asarray(v_hat, dtype=float)
    n = len(v_hat)
    out = [v_hat.copy()]
    for d in range(1, min(distance, n) + 1):
        for idx in combinations(range(n), d):
            v = v_hat.copy()
            v[list(idx)] = 1.0 - v[list(idx)]
            out.append(v)
    return sort_actions(np.array(out))


def all_actions(n_sbs: int) -> np.ndarray:
    ints = np.arange(2 ** n_sbs)
    acts = ((ints[:, None] >> np.arange(n_sbs)) & 1).astype(float)
    order = np.lexsort((ints, acts.sum(axis=1)))
    return acts[order]


def _mse_upstream(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    n = pred.shape[0]
    diff = pred - target
    return float((diff * diff).sum() / n), 2.0 * diff / n


def normalized_error(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over rows of ``||pred - target|| / ||target||``."""
    num = np.linalg.norm(pred - target, axis=1)
    den = np.linalg.norm(target, axis=1)
    ok = den > 0
    if not ok.any():
        return float(num.mean())
    return float((num[ok] / den[ok]).mean())


class DragAgent:
    """Online DRAG controller for one scenario."""

    kind = "drag"

    def __init__(self, config: ScenarioConfig, topology: Topology, params: DragConfig | None = None,
                 rng: np.random.Generator | None = None, seed=None):
        self.config = config
        self.topology = topology
        self.params = params or DragConfig()
        p = self.params
        if rng is None:
            rng = np.random.default_rng(seed)
        self.rng = rng
        self.n_bs = config.n_bs
        self.n_sbs = config.n_sbs
        self.gamma = config.gamma
        self.cost_scale = p.cost_scale or reference_cost(config, topology)
        nets = build_networks(self.n_bs, self.n_sbs, p.history, p.width_scale, rng)
        self.arp = nets["arp"]
        self.cen = nets["cen"]
        self.actor = nets["actor"]
        self.critic = nets["critic"]
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        opt = OPTIMIZERS[p.optimizer]
        self.optimizers = {name: opt(getattr(self, name)) for name in ("arp", "cen", "actor", "critic")}
        B, S = self.n_bs, self.n_sbs
        self.mem_ac = ReplayMemory(p.memory, {"s": B + S, "v": S, "c": 1, "s_next": B + S})
        self.mem_arp = ReplayMemory(p.memory, {"hist": p.history * B, "lam": B})
        self.mem_cen = ReplayMemory(p.memory, {"lam": B, "v_prev": S, "v": S, "c": 1})
        self.sched = p.schedules()
        self.history = ArHistory(p.history, B)
        self.t = 0
        self.v_prev = np.ones(S)
        self._next_pred: np.ndarray | None = None
        self.last_errors: dict[str, float] = {}

    # -- inference ------------------------------------------------------------

    def predict_ar(self, hist_flat) -> np.ndarray:
        out = self.arp.predict(np.asarray(hist_flat, dtype=float)[None, :])[0]
        return self.params.arp_scale * out

    def make_state(self, lam_hat, v_prev) -> np.ndarray:
        return np.concatenate([lam_hat, v_prev])

    def act(self, state) -> np.ndarray:
        return self.actor.predict(np.asarray(state, dtype=float)[None, :])[0]

    def estimate_cost(self, lam_hat, v_prev, candidates) -> np.ndarray:
        """CEN cost estimates (raw units) for a stack of candidate actions."""
        cands = np.atleast_2d(candidates)
        k = len(cands)
        x = np.hstack([np.tile(lam_hat, (k, 1)), np.tile(v_prev, (k, 1)), cands])
        return self.cost_scale * self.cen.predict(x)[:, 0]

    def q_values(self, state, candidates) -> np.ndarray:
        cands = np.atleast_2d(candidates)
        x = np.hstack([np.tile(state, (len(cands), 1)), cands])
        return self.critic.predict(x)[:, 0]

    def refine_action(self, v_hat, state, epsilon: float, rng: np.random.Generator | None = None):
        """Return ``(action, branch)``; branch is ``"cen"`` or ``"critic"``."""
        rng = rng or self.rng
        cands = neighborhood(v_hat, self.params.distance)
        r = rng.random()
        if r <= epsilon:
            lam_hat = state[: self.n_bs]
            v_prev = state[self.n_bs:]
            scores = self.estimate_cost(lam_hat, v_prev, cands)
            branch = "cen"
        else:
            scores = self.q_values(state, cands)
            branch = "critic"
        return cands[int(np.argmin(scores))].copy(), branch

    # -- training ------------------------------------------------------------

    def train_arp(self, batch: dict, lr: float) -> float:
        pred, cache = self.arp.forward(batch["hist"], "train")
        scale = self.params.arp_scale
        loss, up = _mse_upstream(scale * pred, batch["lam"])
        grads, _ = self.arp.backward(cache, scale * up)
        self.optimizers["arp"].step(grads, lr)
        self.last_errors["arp"] = normalized_error(scale * pred, batch["lam"])
        return loss

    def train_cen(self, batch: dict, lr: float) -> float:
        x = np.hstack([batch["lam"], batch["v_prev"], batch["v"]])
        pred, cache = self.cen.forward(x, "train")
        loss, up = _mse_upstream(pred, batch["c"])
        grads, _ = self.cen.backward(cache, up)
        self.optimizers["cen"].step(grads, lr)
        self.last_errors["cen"] = normalized_error(pred, batch["c"])
        return loss

    def critic_targets(self, batch: dict) -> np.ndarray:
        s_next = batch["s_next"]
        a_next = self.actor_target.predict(s_next)
        q_next = self.critic_target.predict(np.hstack([s_next, a_next]))
        return batch["c"] + self.gamma * q_next

    def train_critic(self, batch: dict, targets: np.ndarray, lr: float) -> float:
        x = np.hstack([batch["s"], batch["v"]])
        q, cache = self.critic.forward(x, "train")
        loss, up = _mse_upstream(q, targets)
        grads, _ = self.critic.backward(cache, up)
        self.optimizers["critic"].step(grads, lr)
        self.last_errors["critic"] = normalized_error(q, targets)
        return loss

    def actor_gradients(self, states: np.ndarray, invert: bool = True):
        """Parameter gradients of mean Q(s, pi(s)) w.r.t. the actor.

        With ``invert`` the action gradient is damped near the [0, 1] bounds
        before it enters the actor; without it the result is the exact
        gradient of the composite.
        """
        n = states.shape[0]
        acts, a_cache = self.actor.forward(states, "train")
        q, c_cache = self.critic.forward(np.hstack([states, acts]), "eval")
        _, dx = self.critic.backward(c_cache, np.full_like(q, 1.0 / n), param_grads=False)
        dq_da = dx[:, states.shape[1]:]
        if invert:
            dq_da = grad_inverse(dq_da, acts)
        grads, _ = self.actor.backward(a_cache, dq_da)
        return grads, float(q.mean())

    def train_actor(self, states: np.ndarray, lr: float) -> float:
        grads, q_mean = self.actor_gradients(states)
        self.optimizers["actor"].step(grads, lr)
        return q_mean

    def soft_update(self, tau: float | None = None) -> None:
        tau = self.params.tau if tau is None else tau
        soft_update(self.actor, self.actor_target, tau)
        soft_update(self.critic, self.critic_target, tau)

    def schedule_values(self, t: int | None = None) -> dict[str, float]:
        t = self.t if t is None else t
        return {k: s.value(t) for k, s in self.sched.items()}

    def train_step(self, rates: dict[str, float]) -> None:
        n = self.params.batch
        rng = self.rng
        if len(self.mem_arp) >= n:
            self.train_arp(self.mem_arp.sample(n, rng), rates["lr_arp"])
        if len(self.mem_cen) >= n:
            self.train_cen(self.mem_cen.sample(n, rng), rates["lr_cen"])
        if len(self.mem_ac) >= n:
            batch = self.mem_ac.sample(n, rng)
            self.train_critic(batch, self.critic_targets(batch), rates["lr_critic"])
            self.train_actor(batch["s"], rates["lr_actor"])
            self.soft_update()

    # -- online loop -----------------------------------------------------------

    def predicted_arrivals(self) -> np.ndarray:
        if self._next_pred is None:
            self._next_pred = self.predict_ar(self.history.flat())
        return self._next_pred

    def run_slot(self, env: HetNetEnv) -> dict:
        """One pass of the per-slot loop: decide, execute, train, store."""
        rates = self.schedule_values()
        lam_hat = self.predicted_arrivals()
        state = self.make_state(lam_hat, self.v_prev)
        v_tilde = self.act(state)
        v_hat = proto_action(v_tilde, rates["sigma_n"], self.rng)
        branch = "none"
        if self.params.refine:
            v, branch = self.refine_action(v_hat, state, rates["epsilon"])
        else:
            v = v_hat
        cost, lam = env.step(v)

        for _ in range(self.params.k_train):
            self.train_step(rates)

        hist_bar = self.history.flat()
        self.history.push(lam)
        self._next_pred = None
        next_state = self.make_state(self.predicted_arrivals(), v)
        c = cost.total / self.cost_scale
        self.mem_ac.push(s=state, v=v, c=c, s_next=next_state)
        self.mem_arp.push(hist=hist_bar, lam=lam)
        self.mem_cen.push(lam=lam, v_prev=self.v_prev, v=v, c=c)
        record = {
            "slot": self.t,
            "action": v,
            "arrivals": lam,
            "predicted": lam_hat,
            "cost": cost,
            "branch": branch,
            "proto": v_hat,
        }
        self.v_prev = v
        self.t += 1
        return record

    # -- checkpointing -------------------------------------------------------

    _NETS = ("arp", "cen", "actor", "critic", "actor_target", "critic_target")
    _MEMS = ("mem_ac", "mem_arp", "mem_cen")

    def save_checkpoint(self, path: str | Path) -> None:
        """Full agent state including replay contents and RNG, for bit-exact resume."""
        arrays: dict[str, np.ndarray] = {}
        for name in self._NETS:
            arrays.update(getattr(self, name).to_arrays(prefix=f"{name}/"))
        for name in self._MEMS:
            for k, v in getattr(self, name).state_dict().items():
                arrays[f"{name}/{k}"] = v
        for name, opt in self.optimizers.items():
            for k, v in opt.state_arrays().items():
                arrays[f"opt_{name}/{k}"] = v
        arrays["meta/t"] = np.array(self.t)
        arrays["meta/v_prev"] = self.v_prev
        arrays["meta/hist"] = self.history.buf
        arrays["meta/hist_count"] = np.array(self.history.count)
        arrays["meta/cost_scale"] = np.array(self.cost_scale)
        arrays["meta/rng"] = np.array(repr(self.rng.bit_generator.state))
        arrays["meta/params"] = np.array(repr(asdict(self.params)))
        np.savez(path, **arrays)

    def load_checkpoint(self, path: str | Path) -> None:
        import ast

        with np.load(path) as data:
            arrays = dict(data)
        for name in self._NETS:
            setattr(self, name, Mlp.from_arrays(arrays, prefix=f"{name}/"))
        opt = OPTIMIZERS[self.params.optimizer]
        self.optimizers = {}
        for name in ("arp", "cen", "actor", "critic"):
            self.optimizers[name] = opt(getattr(self, name))
            prefix = f"opt_{name}/"
            self.optimizers[name].load_state_arrays({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
        for name in self._MEMS:
            prefix = f"{name}/"
            getattr(self, name).load_state_dict({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
        self.t = int(arrays["meta/t"])
        self.v_prev = np.array(arrays["meta/v_prev"])
        self.history.buf = np.array(arrays["meta/hist"])
        self.history.count = int(arrays["meta/hist_count"])
        self.cost_scale = float(arrays["meta/cost_scale"])
        self.rng.bit_generator.state = ast.literal_eval(str(arrays["meta/rng"]))
        self._next_pred = None
