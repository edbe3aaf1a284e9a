"""Seeded experiment runner, CSV records and summaries.

Configs are INI files: one ``[experiment]`` section plus one
``[agent:<name>]`` section per agent.  See the README for every key.

Run ``r`` uses seed ``base_seed + r`` for everything it draws, and bandit
runs are simulated in fixed-size batches, so the emitted CSV does not depend
on how many worker processes were used.
"""

import configparser
import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import io
import logging
import math
from pathlib import Path

import numpy as np

from .bandit import (make_asymmetric_env, make_counter_example, make_figure1_target,
                     make_symmetric_env, run_bandit)
from .exploration import RULE_KINDS, SCHEDULE_KINDS, Schedule, SelectionRule
from .oracle import normal_inverse_cdf, value_iteration
from .quantile_core import OnlineQuantileEstimator
from .tabular_rl import (AgentConfig, evaluate_cliff_policy, make_chain, make_cliff_walk,
                         train_episodes)

logger = logging.getLogger(__name__)

CSV_HEADER = ("run_id", "step", "agent", "action", "reward", "bonus", "cum_reward", "optimal")

BANDIT_MAKERS = {
    "counter_example": make_counter_example,
    "asymmetric_bandit": make_asymmetric_env,
    "symmetric_bandit": make_symmetric_env,
}
EPISODIC = ("cliff_walk", "chain_sanity")
EXPERIMENTS = tuple(BANDIT_MAKERS) + EPISODIC + ("figure1_demo",)

#: Runs per simulated batch; fixed so output is independent of ``jobs``.
BATCH_RUNS = 25


class ConfigError(ValueError):
    """An experiment config is invalid; the message names the offending field."""


class RecordFormatError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class AgentSpec:
    name: str
    rule: str = "dltv"
    schedule: str = "decaying"
    c: float = 5.0
    epsilon: float = None
    alpha: float = None
    n_quantiles: int = None
    step_size: float = None
    step_t0: float = None
    init_value: float = None
    init_spread: float = None
    schedule_clock: str = "global"
    kappa: float = 1.0
    greedy_target: bool = False
    target_period: int = None

    def selection(self):
        return SelectionRule(self.rule, Schedule(self.schedule, self.c), self.epsilon, self.alpha)


@dataclass
class ExperimentConfig:
    experiment: str
    agents: list
    horizon: int = 2000
    runs: int = 200
    base_seed: int = 0
    output_path: str = None
    arms: int = 10
    n_quantiles: int = 10
    step_size: float = 0.1
    init_value: float = 0.0
    init_spread: float = 0.0
    width: int = 12
    height: int = 4
    slip: float = 0.1
    gamma: float = 0.95
    chain_length: int = 3
    eval_episodes: int = 500
    risk_alpha: float = 0.9
    max_steps: int = 500
    extras: dict = field(default_factory=dict)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown experiment {self.experiment!r}; "
                              f"expected one of {', '.join(EXPERIMENTS)}")
        for key in ("runs", "horizon"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1, got {getattr(self, key)}")
        if not self.agents and self.experiment != "figure1_demo":
            raise ConfigError("agents: at least one [agent:<name>] section is required")
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names):
            raise ConfigError("agents: agent names must be unique")
        for agent in self.agents:
            prefix = f"agent:{agent.name}"
            if agent.rule not in RULE_KINDS:
                raise ConfigError(f"{prefix}.rule: expected one of {', '.join(RULE_KINDS)}")
            if agent.schedule not in SCHEDULE_KINDS:
                raise ConfigError(f"{prefix}.schedule: expected one of {', '.join(SCHEDULE_KINDS)}")
            if agent.schedule_clock not in ("global", "per_arm"):
                raise ConfigError(f"{prefix}.schedule_clock: expected 'global' or 'per_arm'")
            try:
                agent.selection()
            except ValueError as exc:
                raise ConfigError(f"{prefix}: {exc}") from None
        return self


_INT_KEYS = {"horizon", "runs", "base_seed", "arms", "n_quantiles", "width", "height",
             "chain_length", "eval_episodes", "max_steps", "target_period"}
_FLOAT_KEYS = {"step_size", "init_value", "init_spread", "slip", "gamma", "risk_alpha", "c",
               "epsilon", "alpha", "step_t0", "kappa"}
_BOOL_KEYS = {"greedy_target"}


def _convert(section, key, raw):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from None
    return raw


def parse_config(text):
    """Parse INI ``text`` into a validated :class:`ExperimentConfig`."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from None
    if not parser.has_section("experiment"):
        raise ConfigError("experiment: missing [experiment] section")
    exp_fields = {f for f in ExperimentConfig.__dataclass_fields__} - {"agents", "extras"}
    exp_fields |= {"output"}
    kwargs = {}
    for key, raw in parser.items("experiment"):
        if key not in exp_fields:
            raise ConfigError(f"experiment.{key}: unknown key")
        name = "output_path" if key == "output" else key
        kwargs[name] = _convert("experiment", key, raw)
    if "experiment" not in kwargs:
        raise ConfigError("experiment.experiment: missing experiment kind")

    agent_fields = set(AgentSpec.__dataclass_fields__) - {"name"}
    agents = []
    for section in parser.sections():
        if section == "experiment":
            continue
        if not section.startswith("agent:") or not section[6:].strip():
            raise ConfigError(f"{section}: sections must be [experiment] or [agent:<name>]")
        spec = {}
        for key, raw in parser.items(section):
            if key not in agent_fields:
                raise ConfigError(f"{section}.{key}: unknown key")
            spec[key] = _convert(section, key, raw)
        agents.append(AgentSpec(name=section[6:].strip(), **spec))
    return ExperimentConfig(agents=agents, **kwargs).validate()


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text())


# --------------------------------------------------------------------------
# records


@dataclass
class RecordTable:
    """Column-oriented experiment records, one row per agent step."""

    run_id: np.ndarray
    step: np.ndarray
    agent: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    bonus: np.ndarray
    cum_reward: np.ndarray
    optimal: np.ndarray  # 1/0 for bandits, -1 where not applicable

    @classmethod
    def concat(cls, tables):
        tables = list(tables)
        if not tables:
            return cls(*(np.empty(0) for _ in CSV_HEADER))
        return cls(*(np.concatenate([getattr(t, name) for t in tables]) for name in CSV_HEADER))

    def __len__(self):
        return len(self.run_id)

    def sorted(self):
        order = np.lexsort((self.step, self.agent, self.run_id))
        return RecordTable(*(getattr(self, name)[order] for name in CSV_HEADER))

    def rows(self):
        for i in range(len(self)):
            opt = int(self.optimal[i])
            yield (int(self.run_id[i]), int(self.step[i]), str(self.agent[i]), int(self.action[i]),
                   float(self.reward[i]), float(self.bonus[i]), float(self.cum_reward[i]),
                   None if opt < 0 else bool(opt))


def _fmt(x):
    return f"{x:.6f}"


def write_records(table, path_or_file):
    """Write ``table`` sorted by (run_id, agent, step) with the fixed header."""
    table = table.sorted()
    lines = [",".join(CSV_HEADER)]
    for run_id, step, agent, action, reward, bonus, cum, opt in zip(
            table.run_id.tolist(), table.step.tolist(), table.agent.tolist(),
            table.action.tolist(), table.reward.tolist(), table.bonus.tolist(),
            table.cum_reward.tolist(), table.optimal.tolist()):
        lines.append(f"{run_id},{step},{agent},{action},{_fmt(reward)},{_fmt(bonus)},"
                     f"{_fmt(cum)},{'' if opt < 0 else opt}")
    text = "\n".join(lines) + "\n"
    if isinstance(path_or_file, (str, Path)):
        Path(path_or_file).write_text(text)
    else:
        path_or_file.write(text)


def read_records(path):
    """Parse a records CSV, reporting malformed rows by line number."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"records file not found: {path}")
    cols = {name: [] for name in CSV_HEADER}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return RecordTable.concat([])
        if tuple(header) != CSV_HEADER:
            raise RecordFormatError(1, f"expected header {','.join(CSV_HEADER)}")
        for row in reader:
            line = reader.line_num
            if len(row) != len(CSV_HEADER):
                raise RecordFormatError(line, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                cols["run_id"].append(int(row[0]))
                cols["step"].append(int(row[1]))
                cols["agent"].append(row[2])
                cols["action"].append(int(row[3]))
                for i, name in ((4, "reward"), (5, "bonus"), (6, "cum_reward")):
                    value = float(row[i])
                    if not math.isfinite(value):
                        raise ValueError(f"{name} is not finite")
                    cols[name].append(value)
                cols["optimal"].append(-1 if row[7] == "" else int(row[7]))
            except ValueError as exc:
                raise RecordFormatError(line, str(exc)) from None
            if not row[2]:
                raise RecordFormatError(line, "empty agent name")
    return RecordTable(
        np.array(cols["run_id"], dtype=np.int64), np.array(cols["step"], dtype=np.int64),
        np.array(cols["agent"], dtype=object), np.array(cols["action"], dtype=np.int64),
        np.array(cols["reward"]), np.array(cols["bonus"]), np.array(cols["cum_reward"]),
        np.array(cols["optimal"], dtype=np.int64))


# --------------------------------------------------------------------------
# summaries


def _stderr(x):
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def summarize_table(table):
    """Per-agent final scores and per-step mean curves over runs."""
    agents, curves = {}, {}
    if len(table) == 0:
        return {"agents": agents, "curves": curves}
    for name in sorted(set(table.agent.tolist())):
        mask = table.agent == name
        run_ids = table.run_id[mask]
        steps = table.step[mask]
        cum = table.cum_reward[mask]
        rew = table.reward[mask]
        finals, averages = [], []
        for r in np.unique(run_ids):
            sel = run_ids == r
            last = np.argmax(steps[sel])
            finals.append(cum[sel][last])
            averages.append(rew[sel].mean())
        step_values = np.unique(steps)
        idx = np.searchsorted(step_values, steps)
        counts = np.bincount(idx, minlength=step_values.size)
        opt = table.optimal[mask]
        entry = {
            "runs": int(np.unique(run_ids).size),
            "final_cum_reward_mean": float(np.mean(finals)),
            "final_cum_reward_stderr": _stderr(finals),
            "avg_reward_mean": float(np.mean(averages)),
            "avg_reward_stderr": _stderr(averages),
        }
        if np.all(opt >= 0):
            entry["optimal_rate"] = float(opt.mean())
        agents[name] = entry
        curves[name] = {
            "step": step_values.tolist(),
            "mean_cum_reward": (np.bincount(idx, weights=cum) / counts).tolist(),
            "mean_reward": (np.bincount(idx, weights=rew) / counts).tolist(),
        }
    return {"agents": agents, "curves": curves}


def summarize(records_path):
    table = read_records(records_path)
    if len(table) == 0:
        logger.warning("no records in %s", records_path)
    return summarize_table(table)


def format_summary(summary):
    """Aligned plain-text final-score table."""
    rows = [("agent", "runs", "final_cum_reward", "stderr", "avg_reward", "stderr", "optimal")]
    for name, s in summary["agents"].items():
        rows.append((name, str(s["runs"]), f"{s['final_cum_reward_mean']:.3f}",
                     f"{s['final_cum_reward_stderr']:.3f}", f"{s['avg_reward_mean']:.4f}",
                     f"{s['avg_reward_stderr']:.4f}",
                     f"{s['optimal_rate']:.3f}" if "optimal_rate" in s else "-"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w)
                       for i, (cell, w) in enumerate(zip(row, widths))) for row in rows]
    for key, value in summary.get("extras", {}).items():
        lines.append(f"{key}: {value}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# running


def _bandit_batch(config, runs):
    maker = BANDIT_MAKERS[config.experiment]
    T, K = config.horizon, config.arms
    envs, normals = [], []
    for r in runs:
        seed = config.base_seed + r
        envs.append(maker(K, np.random.default_rng(seed)))
        normals.append(np.random.default_rng([seed, 1]).standard_normal((T, K)))
    normals = np.stack(normals)
    tables = []
    for agent_idx, agent in enumerate(config.agents):
        explore = None
        if agent.rule == "epsilon_greedy":
            streams = [np.random.default_rng([config.base_seed + r, 2, agent_idx]) for r in runs]
            explore = (np.stack([g.random(T) for g in streams]),
                       np.stack([g.integers(K, size=T) for g in streams]))
        out = run_bandit(
            envs, agent.selection(), normals,
            n_quantiles=agent.n_quantiles or config.n_quantiles,
            step_size=agent.step_size if agent.step_size is not None else config.step_size,
            step_t0=agent.step_t0,
            init_value=agent.init_value if agent.init_value is not None else config.init_value,
            init_spread=agent.init_spread if agent.init_spread is not None else config.init_spread,
            schedule_clock=agent.schedule_clock, explore=explore)
        R = len(runs)
        tables.append(RecordTable(
            run_id=np.repeat(np.asarray(runs), T),
            step=np.tile(np.arange(1, T + 1), R),
            agent=np.full(R * T, agent.name, dtype=object),
            action=out["action"].ravel(),
            reward=out["reward"].ravel(),
            bonus=out["bonus"].ravel(),
            cum_reward=out["cum_reward"].ravel(),
            optimal=out["optimal"].ravel().astype(np.int64)))
    return RecordTable.concat(tables)


def _agent_config(config, agent):
    schedule = Schedule(agent.schedule, agent.c)
    return AgentConfig(
        step_size=agent.step_size if agent.step_size is not None else config.step_size,
        schedule=schedule, kappa=agent.kappa,
        n_quantiles=agent.n_quantiles or config.n_quantiles,
        init_value=agent.init_value if agent.init_value is not None else config.init_value,
        init_spread=agent.init_spread if agent.init_spread is not None else config.init_spread,
        target_period=agent.target_period, greedy_target=agent.greedy_target,
        selection=agent.selection(), max_steps=config.max_steps, name=agent.name)


def _make_mdp(config):
    if config.experiment == "cliff_walk":
        return make_cliff_walk(config.width, config.height, config.slip, gamma=config.gamma)
    return make_chain(config.chain_length, gamma=config.gamma)


def _episodic_run(config, r):
    """Train every agent for one seed; returns records and per-agent diagnostics."""
    mdp = _make_mdp(config)
    seed = config.base_seed + r
    tables, diagnostics = [], {}
    for agent in config.agents:
        table, records = train_episodes(mdp, _agent_config(config, agent), config.horizon,
                                        np.random.default_rng(seed), run_id=r)
        n = len(records)
        tables.append(RecordTable(
            run_id=np.full(n, r, dtype=np.int64),
            step=np.array([rec.step for rec in records], dtype=np.int64),
            agent=np.full(n, agent.name, dtype=object),
            action=np.array([rec.action for rec in records], dtype=np.int64),
            reward=np.array([rec.reward for rec in records]),
            bonus=np.array([rec.bonus for rec in records]),
            cum_reward=np.array([rec.cum_reward for rec in records]),
            optimal=np.full(n, -1, dtype=np.int64)))
        if config.experiment == "cliff_walk":
            diagnostics[agent.name] = {
                "mean_greedy": evaluate_cliff_policy(mdp, table, None, config.eval_episodes,
                                                     seed, config.max_steps),
                "var_greedy": evaluate_cliff_policy(mdp, table, config.risk_alpha,
                                                    config.eval_episodes, seed, config.max_steps),
            }
        else:
            q_star = value_iteration(mdp, tol=1e-10)
            live = [s for s in range(mdp.n_states) if not mdp.is_terminal(s)]
            diagnostics[agent.name] = {
                "q_max_error": float(np.max(np.abs(table.q_values() - q_star)[live]))}
    return RecordTable.concat(tables), diagnostics


def _run_bandit_chunk(args):
    config, runs = args
    return _bandit_batch(config, runs), {}


def _run_episodic_chunk(args):
    config, runs = args
    tables, diags = [], {}
    for r in runs:
        table, d = _episodic_run(config, r)
        tables.append(table)
        diags[r] = d
    return RecordTable.concat(tables), diags


def _aggregate_diagnostics(per_run):
    """Average the numeric leaves of per-run diagnostics over runs."""
    out = {}
    runs = sorted(per_run)
    if not runs:
        return out

    def walk(template, path):
        if isinstance(template, dict):
            return {k: walk(v, path + (k,)) for k, v in template.items()}
        values = []
        for r in runs:
            node = per_run[r]
            for k in path:
                node = node[k]
            values.append(node)
        return {"mean": float(np.mean(values)), "stderr": _stderr(values)}

    return walk(per_run[runs[0]], ())


def run_experiment(config, jobs=1, write=True):
    """Run ``config``; returns ``(records, summary)`` and writes the CSV if configured."""
    config.validate()
    if config.experiment == "figure1_demo":
        raise ConfigError("experiment: figure1_demo is run with `demo figure1`")
    bandit = config.experiment in BANDIT_MAKERS
    chunk = BATCH_RUNS if bandit else 1
    chunks = [(config, list(range(i, min(i + chunk, config.runs))))
              for i in range(0, config.runs, chunk)]
    worker = _run_bandit_chunk if bandit else _run_episodic_chunk
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(worker, chunks))
    else:
        results = [worker(c) for c in chunks]

    records = RecordTable.concat(t for t, _ in results).sorted()
    diagnostics = {}
    for _, d in results:
        diagnostics.update(d)
    summary = summarize_table(records)
    del summary["curves"]
    if diagnostics:
        summary["extras"] = {name: _aggregate_diagnostics({r: d[name] for r, d in diagnostics.items()})
                             for name in next(iter(diagnostics.values()))}
    if write and config.output_path:
        write_records(records, config.output_path)
    return records, summary


def final_scores(records, agent):
    """Terminal cumulative reward of every run for ``agent``, ordered by run id."""
    mask = records.agent == agent
    runs = records.run_id[mask]
    out = []
    for r in np.unique(runs):
        sel = runs == r
        out.append(records.cum_reward[mask][sel][np.argmax(records.step[mask][sel])])
    return np.array(out)


# --------------------------------------------------------------------------
# figure-1 demo


def figure1_trajectory(kind, n_steps=20000, seed=0, *, value=3.0, sigma=1.0, n_quantiles=10,
                       eta0=1.0, t0=100.0, init_spread=None, every=100):
    """Online quantile estimation against a degenerate or stochastic target.

    Starts from evenly spaced estimates and feeds ``n_steps`` samples with the
    harmonic step size ``eta0 * t0 / (t0 + t)``.  Returns ``(steps, thetas)``
    with ``thetas[k]`` the estimates after ``steps[k]`` samples.
    """
    sampler = make_figure1_target(kind, value, sigma)
    spread = 2.0 * max(abs(value), sigma, 1.0) if init_spread is None else init_spread
    est = OnlineQuantileEstimator(n_quantiles=n_quantiles, learning_rate="harmonic", eta0=eta0,
                                  t0=t0, init_value=0.0, init_spread=spread)
    est.fit(np.empty(0))
    samples = sampler(np.random.default_rng(seed), n_steps)
    steps, snaps = [0], [est.quantiles_.copy()]
    for start in range(0, n_steps, every):
        est.partial_fit(samples[start:start + every])
        steps.append(est.n_updates_)
        snaps.append(est.quantiles_.copy())
    return np.array(steps), np.array(snaps)


def figure1_oracle(kind, n_quantiles=10, value=3.0, sigma=1.0):
    """True quantiles at the mid-levels for the demo targets."""
    levels = (2 * np.arange(1, n_quantiles + 1) - 1) / (2 * n_quantiles)
    if kind == "degenerate":
        return np.full(n_quantiles, value)
    return np.array([normal_inverse_cdf(t, value, sigma) for t in levels])


def write_figure1_csv(path, n_steps=20000, seed=0, every=100, **kwargs):
    buf = io.StringIO()
    buf.write("target,step,quantile,level,theta,oracle\n")
    for kind in ("degenerate", "stochastic"):
        steps, thetas = figure1_trajectory(kind, n_steps, seed, every=every, **kwargs)
        n = thetas.shape[1]
        levels = (2 * np.arange(1, n + 1) - 1) / (2 * n)
        oracle = figure1_oracle(kind, n, kwargs.get("value", 3.0), kwargs.get("sigma", 1.0))
        for step, row in zip(steps.tolist(), thetas):
            for i in range(n):
                buf.write(f"{kind},{step},{i + 1},{_fmt(levels[i])},{_fmt(row[i])},{_fmt(oracle[i])}\n")
    Path(path).write_text(buf.getvalue())


def with_overrides(config, **overrides):
    """Copy of ``config`` with the non-``None`` overrides applied."""
    return replace(config, **{k: v for k, v in overrides.items() if v is not None}).validate()
