"""Evaluation protocols: agent rollouts, k and dataset-size sweeps, reports.

Every number written by this module is a pure function of its arguments.
Run ``r`` of a spec with master seed ``s`` uses seed ``s ^ r``; episode ``e``
of that run derives its environment seed and agent stream from
``SeedSequence([s ^ r, e])``. Adding runs therefore only appends rows.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import dataset as ds
from .adaptation import BoaAgent, BoaConfig, ZipAgent, ZipConfig
from .distributions import sample_categorical
from .errors import ConsistencyError, FormatError, SpecError
from .featurizer import FeaturizerSpec, FrameStack, push_and_encode
from .gridworld import EnvSpec, GridWorld, expert_action, make_env
from .latent_index import LatentIndex
from .policies import degrade, policy_distribution

AGENTS = ("expert", "random", "bc_tabular", "bc_linear", "zip", "boa+bc_tabular", "boa+bc_linear")
CSV_FIELDS = (
    "agent", "env", "run", "episodes", "k", "n",
    "success_rate", "mean_return", "mean_length", "mean_query_ms", "seed",
)
K_GRID = (1, 5, 10, 15, 20, 30, 40, 50, 60, 70, 80, 90, 100)
N_GRID = (1,) + tuple(range(5, 151, 5))


@dataclass(frozen=True)
class RunSpec:
    agent: str
    env: EnvSpec
    episodes: int = 100
    runs: int = 6
    seed: int = 0
    k: int = 5
    epsilon: float = 0.0
    mode: str = "sample_dirichlet_then_categorical"
    horizon: int = 20
    threshold: float = 0.5
    argmax: bool = False

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise SpecError(f"unknown agent {self.agent!r}; expected one of {AGENTS}")
        if self.episodes < 1 or self.runs < 1:
            raise SpecError("episodes and runs must be >= 1")

    @property
    def uses_index(self) -> bool:
        return self.agent == "zip" or self.agent.startswith("boa")

    @property
    def uses_policy(self) -> bool:
        return "bc_" in self.agent


@dataclass
class Artifacts:
    index: LatentIndex | None = None
    policy: object = None
    featurizer: FeaturizerSpec | None = None


@dataclass
class RunRow:
    agent: str
    env: str
    run: int
    episodes: int
    k: int
    n: int
    success_rate: float
    mean_return: float
    mean_length: float
    mean_query_ms: float
    seed: int


@dataclass
class MetricsTable:
    rows: list[RunRow] = field(default_factory=list)

    def aggregate(self, metric: str) -> tuple[float, float]:
        """Mean and population standard deviation of ``metric`` across rows."""
        values = [getattr(r, metric) for r in self.rows]
        mean = math.fsum(values) / len(values)
        var = math.fsum((v - mean) ** 2 for v in values) / len(values)
        return mean, math.sqrt(var)

    def to_csv(self) -> str:
        return rows_to_csv(self.rows)

    def __add__(self, other: "MetricsTable") -> "MetricsTable":
        return MetricsTable(self.rows + other.rows)


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def rows_to_csv(rows: Sequence[RunRow]) -> str:
    out = io.StringIO()
    out.write(",".join(CSV_FIELDS) + "\n")
    for r in rows:
        out.write(",".join(_fmt(getattr(r, f)) for f in CSV_FIELDS) + "\n")
    return out.getvalue()


def episode_seeds(run_seed: int, episode: int) -> tuple[int, np.random.Generator]:
    """Environment seed and agent generator of one episode."""
    ss = np.random.SeedSequence([run_seed, episode])
    env_seq, agent_seq = ss.spawn(2)
    env_seed = int(env_seq.generate_state(1, np.uint64)[0])
    return env_seed, np.random.Generator(np.random.PCG64(agent_seq))


# agents ---------------------------------------------------------------------


class _Expert:
    def reset(self):
        pass

    def act(self, env: GridWorld, obs):
        return expert_action(env)


class _Random:
    def __init__(self, num_actions: int, rng):
        self.num_actions = num_actions
        self.rng = rng

    def reset(self):
        pass

    def act(self, env, obs):
        return int(self.rng.integers(self.num_actions))


class _PolicyAgent:
    def __init__(self, policy, featurizer, rng, argmax: bool):
        self.policy = policy
        self.featurizer = featurizer
        self.rng = rng
        self.argmax = argmax
        self.stack = FrameStack()

    def reset(self):
        self.stack.reset()

    def act(self, env, obs):
        z = None
        if self.policy.input_kind == "latent":
            z = push_and_encode(self.featurizer, self.stack, obs)
        p = policy_distribution(self.policy, observation=obs, latent=z)
        if self.argmax:
            return int(np.argmax(p))
        return sample_categorical(p, self.rng)


class _Boa:
    def __init__(self, agent: BoaAgent, sink):
        self.agent = agent
        self.sink = sink

    def reset(self):
        self.agent.reset()

    def act(self, env, obs):
        action, diag = self.agent.act(obs)
        if self.sink is not None:
            self.sink(diag)
        return action


class _Zip:
    def __init__(self, agent: ZipAgent):
        self.agent = agent

    def reset(self):
        self.agent.reset()

    def act(self, env, obs):
        return self.agent.act(obs)


def check_artifacts(spec: RunSpec, art: Artifacts) -> None:
    k_actions = spec.env.num_actions
    if spec.uses_index:
        if art.index is None or art.featurizer is None:
            raise ConsistencyError(f"agent {spec.agent} needs an index and its featurizer")
        if art.index.num_actions != k_actions:
            raise ConsistencyError(f"index has K={art.index.num_actions}, env has K={k_actions}")
        if art.index.dim != art.featurizer.dim:
            raise ConsistencyError("index dimension differs from the featurizer output")
        if spec.agent.startswith("boa") and spec.k > len(art.index):
            raise ConsistencyError(f"k={spec.k} exceeds index size {len(art.index)}")
    if spec.uses_policy:
        if art.policy is None:
            raise ConsistencyError(f"agent {spec.agent} needs a policy")
        want = "tabular" if spec.agent.endswith("bc_tabular") else "linear"
        base = getattr(art.policy, "base", art.policy)
        if base.kind != want:
            raise ConsistencyError(f"agent {spec.agent} needs a {want} policy, got {base.kind}")
        if art.policy.num_actions != k_actions:
            raise ConsistencyError(f"policy has K={art.policy.num_actions}, env has K={k_actions}")
        if art.policy.input_kind == "latent":
            if art.featurizer is None or art.featurizer.dim != art.policy.dim:
                raise ConsistencyError("linear policy needs a featurizer of matching dimension")
    if art.featurizer is not None and art.featurizer.view_size != spec.env.view_size:
        raise ConsistencyError("featurizer view size differs from the environment's")


def _make_agent(spec: RunSpec, art: Artifacts, rng, timer, sink):
    if spec.agent == "expert":
        return _Expert()
    if spec.agent == "random":
        return _Random(spec.env.num_actions, rng)
    if spec.agent == "zip":
        cfg = ZipConfig(spec.horizon, spec.threshold)
        return _Zip(ZipAgent(art.index, art.featurizer, cfg, timer=timer))
    policy = degrade(art.policy, spec.epsilon) if spec.epsilon > 0 else art.policy
    if spec.agent.startswith("boa"):
        cfg = BoaConfig(spec.k, spec.mode)
        return _Boa(BoaAgent(policy, art.index, art.featurizer, cfg, rng, timer=timer), sink)
    return _PolicyAgent(policy, art.featurizer, rng, spec.argmax)


def run_episode(env: GridWorld, agent) -> tuple[bool, float, int]:
    agent.reset()
    obs = env.observe()
    total = 0.0
    while not env.state.done:
        res = env.step(agent.act(env, obs))
        total += res.reward
        obs = res.observation
    return env.state.success, total, env.state.t


def evaluate(
    spec: RunSpec,
    art: Artifacts | None = None,
    time_queries: bool = False,
    diagnostics: Callable | None = None,
) -> MetricsTable:
    """Run ``spec.runs`` x ``spec.episodes`` episodes and tabulate one row per run.

    Query timing is wall-clock and therefore not reproducible; it is
    reported only with ``time_queries`` (0 otherwise) so the CSV of a fixed
    spec stays byte-identical. ``diagnostics`` receives every BOA step record.
    """
    art = art or Artifacts()
    check_artifacts(spec, art)
    uses_k = spec.agent.startswith("boa")
    k = spec.k if uses_k else (1 if spec.agent == "zip" else 0)
    n = len(set(art.index.trajectory_ids.tolist())) if spec.uses_index else 0
    table = MetricsTable()
    for r in range(spec.runs):
        run_seed = spec.seed ^ r
        wins, returns, lengths, times = 0, [], [], []
        timer = times.append if time_queries else None
        for e in range(spec.episodes):
            env_seed, rng = episode_seeds(run_seed, e)
            env = make_env(spec.env, env_seed)
            agent = _make_agent(spec, art, rng, timer, diagnostics)
            success, ret, length = run_episode(env, agent)
            wins += success
            returns.append(ret)
            lengths.append(length)
        table.rows.append(
            RunRow(
                agent=spec.agent,
                env=spec.env.task,
                run=r,
                episodes=spec.episodes,
                k=k,
                n=n,
                success_rate=wins / spec.episodes,
                mean_return=math.fsum(returns) / spec.episodes,
                mean_length=sum(lengths) / spec.episodes,
                mean_query_ms=1000.0 * math.fsum(times) / len(times) if times else 0.0,
                seed=run_seed,
            )
        )
    return table


# sweeps ---------------------------------------------------------------------


@dataclass
class SweepResult:
    variable: str
    values: list[int]
    tables: list[MetricsTable]

    @property
    def combined(self) -> MetricsTable:
        out = MetricsTable()
        for t in self.tables:
            out = out + t
        return out

    def best(self) -> int:
        """Value with the highest mean success rate; ties go to the smaller value."""
        scored = [(-t.aggregate("success_rate")[0], v) for v, t in zip(self.values, self.tables)]
        return min(scored)[1]

    def summary_csv(self) -> str:
        best = self.best()
        out = io.StringIO()
        out.write(
            f"agent,env,{self.variable},runs,success_mean,success_std,"
            "return_mean,return_std,length_mean,best\n"
        )
        for v, t in zip(self.values, self.tables):
            sm, ss = t.aggregate("success_rate")
            rm, rs = t.aggregate("mean_return")
            lm, _ = t.aggregate("mean_length")
            row = t.rows[0]
            out.write(
                f"{row.agent},{row.env},{v},{len(t.rows)},{sm:.6f},{ss:.6f},"
                f"{rm:.6f},{rs:.6f},{lm:.6f},{int(v == best)}\n"
            )
        return out.getvalue()


def ablate_k(
    spec: RunSpec, art: Artifacts, k_list: Sequence[int] = K_GRID, time_queries: bool = False
) -> SweepResult:
    if not k_list:
        raise SpecError("k list must not be empty")
    for k in k_list:
        if k < 1 or (art.index is not None and k > len(art.index)):
            raise SpecError(f"k={k} outside [1, index size]")
    tables = [evaluate(dataclasses.replace(spec, k=k), art, time_queries) for k in k_list]
    return SweepResult("k", list(k_list), tables)


def default_n_list(size: int) -> list[int]:
    return [n for n in N_GRID if n <= size]


def index_for(data: ds.Dataset, featurizer: FeaturizerSpec) -> LatentIndex:
    return LatentIndex.build(
        ds.encode_dataset(data, featurizer), data.env.num_actions, featurizer.to_dict()
    )


def ablate_n(
    spec: RunSpec,
    data: ds.Dataset,
    featurizer: FeaturizerSpec,
    policy=None,
    n_list: Sequence[int] | None = None,
    time_queries: bool = False,
    on_index: Callable | None = None,
) -> SweepResult:
    """Truncate, re-encode, re-index and evaluate for every dataset size."""
    if n_list is None:
        n_list = default_n_list(len(data))
    if not n_list:
        raise SpecError("n list must not be empty")
    tables = []
    for n in n_list:
        index = index_for(ds.truncate(data, n), featurizer)
        if on_index is not None:
            on_index(n, index)
        tables.append(evaluate(spec, Artifacts(index, policy, featurizer), time_queries))
    return SweepResult("n", list(n_list), tables)


# reports --------------------------------------------------------------------


def read_rows(text: str) -> list[RunRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_FIELDS:
        raise FormatError(f"unexpected CSV header {header}; expected {','.join(CSV_FIELDS)}")
    types = [f.type for f in dataclasses.fields(RunRow)]
    rows = []
    for line in reader:
        if len(line) != len(CSV_FIELDS):
            raise FormatError(f"row has {len(line)} fields, expected {len(CSV_FIELDS)}")
        conv = [float(v) if t == "float" else int(v) if t == "int" else v for v, t in zip(line, types)]
        rows.append(RunRow(*conv))
    return rows


REPORT_METRICS = ("success_rate", "mean_return", "mean_length", "mean_query_ms")


def report(texts: Sequence[str]) -> tuple[str, str]:
    """Merge run CSVs into a per-configuration mean/std table and a long-format table."""
    rows = [r for t in texts for r in read_rows(t)]
    groups: dict[tuple, list[RunRow]] = {}
    for r in rows:
        groups.setdefault((r.agent, r.env, r.k, r.n), []).append(r)
    wide = io.StringIO()
    cols = ["agent", "env", "k", "n", "runs"]
    for m in REPORT_METRICS:
        cols += [f"{m}_mean", f"{m}_std"]
    wide.write(",".join(cols) + "\n")
    for key in sorted(groups):
        table = MetricsTable(groups[key])
        vals = [str(x) for x in key] + [str(len(table.rows))]
        for m in REPORT_METRICS:
            mean, std = table.aggregate(m)
            vals += [f"{mean:.6f}", f"{std:.6f}"]
        wide.write(",".join(vals) + "\n")
    long = io.StringIO()
    long.write("agent,env,k,n,run,seed,metric,value\n")
    for r in rows:
        for m in REPORT_METRICS:
            long.write(f"{r.agent},{r.env},{r.k},{r.n},{r.run},{r.seed},{m},{getattr(r, m):.6f}\n")
    return wide.getvalue(), long.getvalue()
