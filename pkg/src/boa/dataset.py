"""Expert trajectories: recording, the binary trajectory format, encoding.

File layout (all integers little-endian)::

    b"BOATRJ1\\n"
    one line of JSON manifest, terminated by b"\\n"
    per trajectory:
        u32 episode_id, u64 env seed, u32 length, u8 success
        length x (view*view + 1) u8   observation cells + carried flag
        length x u8                   actions
        length x f32                  rewards

Observations are stored raw, so datasets survive featurizer changes.
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, FormatError, RecordError
from .featurizer import FeaturizerSpec, FrameStack, push_and_encode
from .gridworld import EnvSpec, Observation, expert_action, make_env
from .latent_index import IndexEntry

MAGIC = b"BOATRJ1\n"
VERSION = 1
_BLOCK = struct.Struct("<IQIB")


@dataclass
class Trajectory:
    episode_id: int
    seed: int
    observations: list[Observation]
    actions: list[int]
    rewards: list[float]
    success: bool

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def total_return(self) -> float:
        return float(sum(self.rewards))


@dataclass
class Dataset:
    env: EnvSpec
    trajectories: list[Trajectory]
    featurizer: FeaturizerSpec | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trajectories)

    def manifest(self) -> dict:
        return {
            "version": VERSION,
            "env": self.env.to_dict(include_seed=False),
            "featurizer": self.featurizer.to_dict() if self.featurizer else None,
            "n": len(self.trajectories),
            "meta": self.meta,
        }

    def pairs(self):
        for traj in self.trajectories:
            yield from zip(traj.observations, traj.actions)

    @property
    def num_steps(self) -> int:
        return sum(len(t) for t in self.trajectories)


def rollout(env_spec: EnvSpec, seed: int, act, episode_id: int = 0) -> Trajectory:
    """Play one episode; ``act(env, observation)`` returns the next action."""
    env = make_env(env_spec, seed)
    obs = env.observe()
    observations, actions, rewards = [], [], []
    while not env.state.done:
        a = int(act(env, obs))
        res = env.step(a)
        observations.append(obs)
        actions.append(a)
        rewards.append(float(np.float32(res.reward)))
        obs = res.observation
    return Trajectory(episode_id, seed, observations, actions, rewards, env.state.success)


def record(
    env_spec: EnvSpec,
    n: int,
    seed: int,
    eta: float = 0.0,
    expert=expert_action,
    keep_failures: bool = False,
    retry_cap: int = 100,
) -> Dataset:
    """Roll out the scripted expert for ``n`` episodes.

    Episode ``i`` uses environment seed ``seed + i``. Failed episodes are
    dropped and replaced with fresh seeds ``seed + n``, ``seed + n + 1``, ...
    unless ``keep_failures`` is set.
    """
    if n < 1:
        raise DomainError("need at least one episode")
    if not 0.0 <= eta <= 1.0:
        raise DomainError("tie-noise eta must lie in [0, 1]")
    trajectories = []
    fresh = seed + n
    retries = 0
    for i in range(n):
        ep_seed = seed + i
        while True:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([ep_seed, 1])))
            traj = rollout(env_spec, ep_seed, lambda env, _obs: expert(env, rng, eta), i)
            if traj.success or keep_failures:
                break
            retries += 1
            if retries > retry_cap:
                raise RecordError(f"expert failed {retries} times; retry cap {retry_cap} exhausted")
            ep_seed, fresh = fresh, fresh + 1
        trajectories.append(traj)
    meta = {"seed": seed, "eta": eta, "keep_failures": keep_failures}
    return Dataset(env_spec.with_seed(0), trajectories, meta=meta)


def replay(dataset: Dataset, traj: Trajectory) -> bool:
    """True if re-running the stored actions reproduces every stored record."""
    env = make_env(dataset.env, traj.seed)
    for obs, a, r in zip(traj.observations, traj.actions, traj.rewards):
        if env.state.done or env.observe() != obs:
            return False
        res = env.step(a)
        if float(np.float32(res.reward)) != r:
            return False
    return env.state.done and env.state.success == traj.success


def truncate(dataset: Dataset, m: int) -> Dataset:
    """The first ``m`` trajectories, in their original order."""
    if not 1 <= m <= len(dataset):
        raise DomainError(f"m={m} outside [1, {len(dataset)}]")
    return dataclasses.replace(dataset, trajectories=dataset.trajectories[:m])


def encode_dataset(dataset: Dataset, featurizer: FeaturizerSpec) -> list[IndexEntry]:
    """One index entry per step; the frame stack restarts with each trajectory."""
    if featurizer.view_size != dataset.env.view_size:
        raise DimensionError(
            f"featurizer expects {featurizer.view_size}x{featurizer.view_size} views, "
            f"dataset has {dataset.env.view_size}x{dataset.env.view_size}"
        )
    entries = []
    for traj in dataset.trajectories:
        stack = FrameStack()
        for step, (obs, a) in enumerate(zip(traj.observations, traj.actions)):
            z = push_and_encode(featurizer, stack, obs)
            entries.append(IndexEntry(z, a, traj.episode_id, step))
    return entries


# persistence ----------------------------------------------------------------


def to_bytes(dataset: Dataset) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(json.dumps(dataset.manifest(), sort_keys=True, separators=(",", ":")).encode())
    out.write(b"\n")
    for traj in dataset.trajectories:
        out.write(_BLOCK.pack(traj.episode_id, traj.seed, len(traj), int(traj.success)))
        for obs in traj.observations:
            out.write(obs.to_bytes())
        out.write(np.asarray(traj.actions, dtype=np.uint8).tobytes())
        out.write(np.asarray(traj.rewards, dtype="<f4").tobytes())
    return out.getvalue()


def from_bytes(data: bytes) -> Dataset:
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError("not a trajectory file (bad magic)")
    nl = data.find(b"\n", len(MAGIC))
    if nl < 0:
        raise FormatError("trajectory manifest is truncated")
    try:
        manifest = json.loads(data[len(MAGIC) : nl])
        if manifest["version"] != VERSION:
            raise FormatError(f"unsupported trajectory format version {manifest['version']}")
        env = EnvSpec(**manifest["env"])
        feat = manifest.get("featurizer")
        featurizer = FeaturizerSpec.from_dict(feat) if feat else None
        n = int(manifest["n"])
    except FormatError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed trajectory manifest: {exc}") from exc
    size = env.view_size
    obs_len = size * size + 1
    pos = nl + 1
    trajectories = []
    for _ in range(n):
        if len(data) < pos + _BLOCK.size:
            raise FormatError("trajectory file is truncated")
        episode_id, seed, length, success = _BLOCK.unpack_from(data, pos)
        pos += _BLOCK.size
        end = pos + length * (obs_len + 1 + 4)
        if length == 0 or len(data) < end:
            raise FormatError("trajectory block is truncated or empty")
        observations = [
            Observation.from_bytes(data[pos + i * obs_len : pos + (i + 1) * obs_len], size)
            for i in range(length)
        ]
        pos += length * obs_len
        actions = np.frombuffer(data, dtype=np.uint8, count=length, offset=pos).tolist()
        pos += length
        rewards = np.frombuffer(data, dtype="<f4", count=length, offset=pos).astype(float).tolist()
        pos += 4 * length
        if max(actions) >= env.num_actions:
            raise FormatError("trajectory contains an out-of-range action")
        trajectories.append(Trajectory(episode_id, seed, observations, actions, rewards, bool(success)))
    if pos != len(data):
        raise FormatError("trailing bytes after the last trajectory")
    return Dataset(env, trajectories, featurizer, manifest.get("meta", {}))


def save(dataset: Dataset, path) -> None:
    Path(path).write_bytes(to_bytes(dataset))


def load(path) -> Dataset:
    return from_bytes(Path(path).read_bytes())
