"""Experiment orchestration: spec files, seeded trace runs, CSV/JSON output.

Output layout for a run directory::

    <out>/summary.json
    <out>/<point>/trace_<i>_slots.csv    per-slot actions, arrivals, costs
    <out>/<point>/trace_<i>_daily.csv    per-day raw and normalised costs
    <out>/<point>/trace_<i>_meta.json    seeds and tabular visit statistics

A *point* is one configuration of an experiment (a single ``base`` point for
``stationary`` and ``pattern_shift_100d``; one per value for the sweeps).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import pickle
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .agent import DragAgent, DragConfig
from .baselines import QLearningAgent, SotaPolicy, StaticPolicy, TabularActorCritic
from .config import ConfigError, ScenarioConfig, coerce_entries, load_scenario, parse_kv_text
from .env import HetNetEnv

log = logging.getLogger(__name__)

AGENTS = ("drag", "ql", "tact_style", "sota", "all_on", "all_off")
EXPERIMENTS = ("stationary", "pattern_shift_100d", "noise_sweep", "scale_sweep", "width_sweep")
SWEEP_DEFAULTS = {
    "noise_sweep": (0.0, 0.01, 0.02, 0.03, 0.04, 0.05),
    "scale_sweep": (6, 8, 10, 12, 14, 16),
    "width_sweep": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
}
WORKERS_ENV = "DRAGSIM_WORKERS"
SUMMARY_DAYS = 20
# stream tag separating the agent's generator from the environment's
_AGENT_STREAM = 7


@dataclass
class ExperimentSpec:
    scenario: str | None = None
    agent: str = "drag"
    days: int = 416
    traces: int = 20
    seed: int = 0
    experiment: str = "stationary"
    out: str | None = None
    # DRAG settings
    width_scale: float = 1.0
    k_train: int = 5
    refine: bool = True
    optimizer: str = "adam"
    # experiment settings
    shift_every_days: int = 100
    sweep: str = ""
    walltime: float = 0.0
    overrides: dict = field(default_factory=dict)
    base_dir: str = "."

    def problems(self) -> list[tuple[str, str]]:
        """``(key, message)`` for every invalid field."""
        out = []
        if self.agent not in AGENTS:
            out.append(("agent", f"unknown agent {self.agent!r}; expected one of {', '.join(AGENTS)}"))
        if self.experiment not in EXPERIMENTS:
            out.append(("experiment", f"unknown experiment {self.experiment!r}; "
                                      f"expected one of {', '.join(EXPERIMENTS)}"))
        for key in ("days", "traces", "k_train"):
            if getattr(self, key) < 1:
                out.append((key, f"{key} must be positive"))
        if self.seed < 0:
            out.append(("seed", "seed must be non-negative"))
        if self.width_scale <= 0:
            out.append(("width_scale", "width_scale must be positive"))
        return out

    def validate(self) -> None:
        bad = self.problems()
        if bad:
            raise ConfigError(bad[0][1])

    def scenario_config(self) -> ScenarioConfig:
        base = ScenarioConfig()
        if self.scenario:
            path = Path(self.scenario)
            if not path.is_absolute():
                path = Path(self.base_dir) / path
            base = load_scenario(path)
        try:
            return base.replace(**self.overrides) if self.overrides else base
        except ConfigError as exc:
            raise ConfigError(f"scenario override: {exc}") from None

    def drag_config(self) -> DragConfig:
        return DragConfig(width_scale=self.width_scale, k_train=self.k_train, refine=self.refine,
                          optimizer=self.optimizer)

    def sweep_values(self) -> tuple:
        if not self.sweep:
            return SWEEP_DEFAULTS.get(self.experiment, ())
        kind = int if self.experiment == "scale_sweep" else float
        return tuple(kind(v) for v in self.sweep.split(","))


_SPEC_KEYS = {f.name for f in fields(ExperimentSpec)} - {"overrides", "base_dir"}


def spec_from_text(text: str, path: str | None = None) -> ExperimentSpec:
    """Parse an experiment file.

    Keys are the :class:`ExperimentSpec` fields, plus ``scenario.<key>`` for
    inline scenario overrides and ``slots`` as an alternative to ``days``.
    """
    entries = parse_kv_text(text, path)
    plain, scen, slots = [], [], None
    for lineno, key, value in entries:
        if key.startswith("scenario."):
            scen.append((lineno, key[len("scenario."):], value))
        elif key == "slots":
            slots = (lineno, value)
        elif key in _SPEC_KEYS:
            plain.append((lineno, key, value))
        else:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
    values = coerce_entries(ExperimentSpec, plain, path)
    overrides = coerce_entries(ScenarioConfig, scen, path)
    spec = ExperimentSpec(**values, overrides=overrides)
    if path is not None:
        spec.base_dir = str(Path(path).parent)
    lines = {key: lineno for lineno, key, _ in entries}
    config = spec.scenario_config()
    if slots is not None:
        lineno, raw = slots
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"bad value {raw!r} for slots (expected int)", lineno, path) from None
        if n <= 0 or n % config.slots_per_day:
            raise ConfigError(f"slots={n} is not a positive multiple of slots_per_day={config.slots_per_day}",
                              lineno, path)
        spec.days = n // config.slots_per_day
    bad = spec.problems()
    if bad:
        key, message = bad[0]
        raise ConfigError(message, lines.get(key), path)
    return spec


def load_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    return spec_from_text(path.read_text(), str(path))


# -- experiment points --------------------------------------------------------

@dataclass
class Point:
    label: str
    config: ScenarioConfig
    drag: DragConfig
    shift_every_days: int | None = None


def experiment_points(spec: ExperimentSpec) -> list[Point]:
    config = spec.scenario_config()
    drag = spec.drag_config()
    kind = spec.experiment
    if kind == "stationary":
        return [Point("base", config, drag)]
    if kind == "pattern_shift_100d":
        return [Point("base", config, drag, spec.shift_every_days)]
    points = []
    for v in spec.sweep_values():
        if kind == "noise_sweep":
            points.append(Point(f"sigma_{v:g}", config.replace(ou_sigma=v), drag))
        elif kind == "scale_sweep":
            points.append(Point(f"sbs_{v}", config.replace(n_sbs=int(v)), drag))
        else:
            d = dataclasses.replace(drag, width_scale=float(v))
            points.append(Point(f"width_{v:g}", config, d))
    return points


def trace_seed(master: int, i: int) -> int:
    return master ^ i


def make_policy(kind: str, config: ScenarioConfig, env: HetNetEnv, seed: int, drag: DragConfig | None = None):
    """Build the controller ``kind`` for ``env``; every policy exposes ``run_slot(env)``."""
    rng = np.random.default_rng([seed, _AGENT_STREAM])
    if kind == "drag":
        return DragAgent(config, env.topology, drag or DragConfig(), rng=rng)
    if kind == "ql":
        return QLearningAgent(config, env.topology, rng=rng)
    if kind == "tact_style":
        return TabularActorCritic(config, env.topology, rng=rng)
    if kind == "sota":
        return SotaPolicy(config, env.topology)
    if kind in ("all_on", "all_off"):
        return StaticPolicy(config, env.topology, kind)
    raise ConfigError(f"unknown agent {kind!r}")


# -- per-trace runs -------------------------------------------------------------

@dataclass
class DailyMetric:
    day: int
    raw: float
    normalized: float
    energy: float
    delay: float
    switching: float
    all_on: float


def all_on_daily(config: ScenarioConfig, seed: int, days: int, shift_every_days: int | None) -> np.ndarray:
    """Daily mean cost of the all-on policy on the trace generated by ``seed``."""
    env = HetNetEnv.from_seed(config, seed, shift_every_days)
    on = np.ones(config.n_sbs)
    costs = np.empty(days * config.slots_per_day)
    for t in range(len(costs)):
        costs[t] = env.step(on)[0].total
    return costs.reshape(days, -1).mean(axis=1)


def daily_metrics(slot_costs: np.ndarray, all_on: np.ndarray, slots_per_day: int) -> list[DailyMetric]:
    """``slot_costs`` has columns energy, delay, switching."""
    n_days = len(all_on)
    days = slot_costs.reshape(n_days, slots_per_day, 3).mean(axis=1)
    # same reduction as the all-on baseline, so that policy normalises to exactly 1
    totals = (slot_costs[:, 0] + slot_costs[:, 1] + slot_costs[:, 2]).reshape(n_days, slots_per_day).mean(axis=1)
    out = []
    for d, (e, dl, s) in enumerate(days):
        out.append(DailyMetric(d, totals[d], totals[d] / all_on[d], e, dl, s, all_on[d]))
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def slot_header(config: ScenarioConfig) -> list[str]:
    lam = [f"lambda_{i}" for i in range(config.n_bs)]
    return ["slot", "day", "action", "n_active", *lam, "energy", "delay", "switching", "total"]


DAILY_HEADER = ["day", "raw_cost", "normalized_cost", "energy", "delay", "switching", "all_on_cost"]


@dataclass
class _TraceState:
    policy: object
    env: HetNetEnv
    rows: list
    costs: list
    done_slots: int = 0


def _trace_paths(out: Path, label: str, i: int) -> dict[str, Path]:
    d = out / label
    return {
        "slots": d / f"trace_{i}_slots.csv",
        "daily": d / f"trace_{i}_daily.csv",
        "meta": d / f"trace_{i}_meta.json",
        "ckpt": d / f"trace_{i}.ckpt",
    }


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def run_trace(spec: ExperimentSpec, point: Point, i: int, out: Path) -> str:
    """Run one trace of one point; returns ``"done"`` or ``"interrupted"``.

    When the walltime budget runs out the full simulation state is pickled
    next to the outputs; calling again with the same arguments resumes it.
    """
    config = point.config
    seed = trace_seed(spec.seed, i)
    paths = _trace_paths(out, point.label, i)
    paths["slots"].parent.mkdir(parents=True, exist_ok=True)
    if paths["meta"].exists() and not paths["ckpt"].exists():
        return "done"
    if paths["ckpt"].exists():
        with open(paths["ckpt"], "rb") as fh:
            state: _TraceState = pickle.load(fh)
    else:
        env = HetNetEnv.from_seed(config, seed, point.shift_every_days)
        state = _TraceState(make_policy(spec.agent, config, env, seed, point.drag), env, [], [])
    n_slots = spec.days * config.slots_per_day
    spd = config.slots_per_day
    start = time.monotonic()
    while state.done_slots < n_slots:
        rec = state.policy.run_slot(state.env)
        t = state.done_slots
        c = rec["cost"]
        bits = "".join("1" if b else "0" for b in rec["action"].astype(int))
        state.rows.append([t, t // spd, bits, bits.count("1"), *map(_fmt, rec["arrivals"]),
                           _fmt(c.energy), _fmt(c.delay_cost), _fmt(c.switching_cost), _fmt(c.total)])
        state.costs.append((c.energy, c.delay_cost, c.switching_cost))
        state.done_slots += 1
        over = spec.walltime > 0 and time.monotonic() - start > spec.walltime
        if over and state.done_slots % spd == 0 and state.done_slots < n_slots:
            _write_atomic(paths["ckpt"], pickle.dumps(state))
            log.info("%s trace %d: walltime reached at slot %d, checkpointed", point.label, i, state.done_slots)
            return "interrupted"

    all_on = all_on_daily(config, seed, spec.days, point.shift_every_days)
    metrics = daily_metrics(np.array(state.costs), all_on, spd)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(slot_header(config))
    w.writerows(state.rows)
    _write_atomic(paths["slots"], buf.getvalue().encode())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DAILY_HEADER)
    for m in metrics:
        w.writerow([m.day, _fmt(m.raw), _fmt(m.normalized), _fmt(m.energy), _fmt(m.delay), _fmt(m.switching),
                    _fmt(m.all_on)])
    _write_atomic(paths["daily"], buf.getvalue().encode())

    meta = {"point": point.label, "trace": i, "seed": seed, "agent": spec.agent, "days": spec.days}
    if hasattr(state.policy, "visit_stats"):
        meta["visit_stats"] = state.policy.visit_stats()
    _write_atomic(paths["meta"], (json.dumps(meta, sort_keys=True, indent=1) + "\n").encode())
    if paths["ckpt"].exists():
        paths["ckpt"].unlink()
    return "done"


def _run_task(args) -> tuple[str, int, str]:
    spec, point, i, out = args
    return point.label, i, run_trace(spec, point, i, out)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def run_experiment(spec: ExperimentSpec, out: str | Path | None = None) -> dict:
    """Run every trace of every point and write outputs plus ``summary.json``.

    Returns the summary record. ``summary["complete"]`` is false when some
    trace hit the walltime budget; rerunning resumes those traces.
    """
    spec.validate()
    out = Path(out or spec.out or "runs")
    out.mkdir(parents=True, exist_ok=True)
    points = experiment_points(spec)
    tasks = [(spec, p, i, out) for p in points for i in range(spec.traces)]
    workers = worker_count()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    complete = all(status == "done" for _, _, status in sorted(results))
    summary = {
        "experiment": spec.experiment,
        "agent": spec.agent,
        "days": spec.days,
        "traces": spec.traces,
        "seed": spec.seed,
        "complete": complete,
        "points": {},
    }
    if complete:
        window = min(SUMMARY_DAYS, spec.days)
        summary["final_days"] = window
        summary["points"] = {p.label: summarize_point(out / p.label, window) for p in points}
    _write_atomic(out / "summary.json", (json.dumps(summary, sort_keys=True, indent=1) + "\n").encode())
    return summary


# -- analysis -------------------------------------------------------------------

def moving_average(series, window: int = 10) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average the available prefix."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def read_daily(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in DAILY_HEADER}


def _trace_index(path: Path) -> int:
    return int(path.name.split("_")[1])


def summarize_point(point_dir: str | Path, final_days: int = SUMMARY_DAYS) -> dict:
    """Final-``final_days`` mean normalised cost per trace, then mean/std across traces."""
    point_dir = Path(point_dir)
    files = sorted(point_dir.glob("trace_*_daily.csv"), key=_trace_index)
    if not files:
        raise FileNotFoundError(f"no daily files in {point_dir}")
    per_trace = []
    for f in files:
        norm = read_daily(f)["normalized_cost"]
        if len(norm) < final_days:
            raise ValueError(f"{f} has {len(norm)} days, need at least {final_days}")
        per_trace.append(float(norm[-final_days:].mean()))
    out = {
        "mean": float(np.mean(per_trace)),
        "std": float(np.std(per_trace)),
        "per_trace": per_trace,
        "traces": len(per_trace),
    }
    visits = []
    for f in files:
        meta_path = f.with_name(f.name.replace("_daily.csv", "_meta.json"))
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            if "visit_stats" in meta:
                visits.append(meta["visit_stats"])
    if visits:
        out["visit_stats"] = {k: float(np.mean([v[k] for v in visits])) for k in visits[0]}
    return out


def summarize(run_dir: str | Path, final_days: int = SUMMARY_DAYS) -> dict:
    """Summary record for every point directory under ``run_dir``."""
    run_dir = Path(run_dir)
    points = sorted(p for p in run_dir.iterdir() if p.is_dir() and any(p.glob("trace_*_daily.csv")))
    if not points:
        raise FileNotFoundError(f"no run outputs under {run_dir}")
    return {p.name: summarize_point(p, final_days) for p in points}
