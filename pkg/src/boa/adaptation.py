"""Bayesian online adaptation (BOA) and the ZIP action-copy baseline.

At every step BOA treats the base policy's action distribution as Dirichlet
pseudo-counts, scales them by the number of retrieved neighbors ``k`` so they
carry as much weight as the evidence, adds the neighbors' action counts and
picks an action from the resulting posterior::

    alpha_post = max(k * prior, floor * k) + counts

The retrieval path never looks at the policy output: the query depends only
on the current latent and ``k``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    CONCENTRATION_FLOOR,
    RngState,
    as_counts,
    as_probs,
    sample_categorical,
    sample_dirichlet,
)
from .errors import ConsistencyError, DimensionError, DomainError
from .featurizer import FeaturizerSpec, FrameStack, push_and_encode
from .gridworld import Observation
from .latent_index import LatentIndex, Neighbor, action_counts
from .policies import policy_distribution

MODES = ("sample_dirichlet_then_categorical", "mean_categorical", "argmax_mean")


@dataclass(frozen=True)
class BoaConfig:
    k: int = 5
    mode: str = "sample_dirichlet_then_categorical"
    floor: float = CONCENTRATION_FLOOR

    def __post_init__(self):
        if self.k < 1:
            raise DomainError("k must be >= 1")
        if self.floor <= 0:
            raise DomainError("concentration floor must be > 0")
        if self.mode not in MODES:
            raise DomainError(f"unknown mode {self.mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class ZipConfig:
    horizon: int = 20
    threshold: float = 0.5

    def __post_init__(self):
        if self.horizon < 1:
            raise DomainError("copy horizon must be >= 1")
        if self.threshold < 0:
            raise DomainError("re-search threshold must be >= 0")


@dataclass
class StepDiagnostics:
    prior: np.ndarray
    counts: np.ndarray
    k: int
    floor: float
    posterior: np.ndarray
    neighbors: list[Neighbor]
    action: int
    mode: str

    def is_consistent(self) -> bool:
        again = posterior_concentration(self.prior, self.counts, self.k, self.floor)
        return np.array_equal(again, self.posterior)

    def to_dict(self) -> dict:
        return {
            "prior": self.prior.tolist(),
            "counts": self.counts.tolist(),
            "k": self.k,
            "floor": self.floor,
            "posterior": self.posterior.tolist(),
            "neighbors": [
                {
                    "entry_id": nb.entry_id,
                    "distance": nb.distance,
                    "action": nb.action,
                    "trajectory_id": nb.trajectory_id,
                    "step": nb.step,
                }
                for nb in self.neighbors
            ],
            "action": self.action,
            "mode": self.mode,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def posterior_concentration(prior, counts, k: int, floor: float = CONCENTRATION_FLOOR) -> np.ndarray:
    p = as_probs(prior)
    c = as_counts(counts)
    if p.shape != c.shape:
        raise DimensionError(f"prior has {p.size} actions, counts have {c.size}")
    if int(c.sum()) != k:
        raise ConsistencyError(f"counts total {int(c.sum())} differs from k={k}")
    return np.maximum(k * p, floor * k) + c


def select_action(alpha: np.ndarray, mode: str, rng: RngState) -> int:
    if mode == "sample_dirichlet_then_categorical":
        return sample_categorical(sample_dirichlet(alpha, rng), rng)
    if mode == "mean_categorical":
        return sample_categorical(alpha / alpha.sum(), rng)
    if mode == "argmax_mean":
        return int(np.argmax(alpha))
    raise DomainError(f"unknown mode {mode!r}")


def boa_step(
    policy,
    index: LatentIndex,
    featurizer: FeaturizerSpec,
    stack: FrameStack,
    observation: Observation,
    config: BoaConfig,
    rng: RngState,
    timer=None,
) -> tuple[int, StepDiagnostics]:
    """One adapted action. ``timer``, if given, receives each query's seconds."""
    if policy.num_actions != index.num_actions:
        raise ConsistencyError(
            f"policy has {policy.num_actions} actions, index has {index.num_actions}"
        )
    if featurizer.dim != index.dim:
        raise ConsistencyError(f"featurizer dim {featurizer.dim} != index dim {index.dim}")
    z = push_and_encode(featurizer, stack, observation)
    prior = policy_distribution(policy, observation=observation, latent=z)
    neighbors = _timed_query(index, z, config.k, timer)
    counts = action_counts(neighbors, index.num_actions)
    alpha = posterior_concentration(prior, counts, config.k, config.floor)
    action = select_action(alpha, config.mode, rng)
    return action, StepDiagnostics(
        prior, counts, config.k, config.floor, alpha, neighbors, action, config.mode
    )


def _timed_query(index, z, k, timer):
    if timer is None:
        return index.query(z, k)
    t0 = time.perf_counter()
    out = index.query(z, k)
    timer(time.perf_counter() - t0)
    return out


@dataclass
class ZipMemory:
    """Copy cursor: the entry whose action was taken most recently."""

    trajectory_id: int | None = None
    step: int = 0
    copied: int = 0
    researched: bool = False

    def reset(self) -> None:
        self.trajectory_id = None
        self.step = 0
        self.copied = 0
        self.researched = False


def zip_step(
    index: LatentIndex,
    featurizer: FeaturizerSpec,
    stack: FrameStack,
    observation: Observation,
    config: ZipConfig,
    memory: ZipMemory,
    timer=None,
) -> int:
    """Copy the anchored expert trajectory; re-anchor when the copy runs out or drifts.

    A copy continues while fewer than ``horizon`` actions were copied, the
    anchored trajectory has a next step, and the squared distance between
    the current latent and the latent stored at that next step is below
    ``threshold``. Otherwise a 1-nearest-neighbor search re-anchors.
    """
    if featurizer.dim != index.dim:
        raise ConsistencyError(f"featurizer dim {featurizer.dim} != index dim {index.dim}")
    z = push_and_encode(featurizer, stack, observation)
    if memory.trajectory_id is not None and memory.copied < config.horizon:
        nxt = index.entry_id(memory.trajectory_id, memory.step + 1)
        if nxt is not None:
            d = float(index.squared_distances_to(z, nxt))
            if d < config.threshold:
                memory.step += 1
                memory.copied += 1
                memory.researched = False
                return int(index.actions[nxt])
    (nb,) = _timed_query(index, z, 1, timer)
    memory.trajectory_id = nb.trajectory_id
    memory.step = nb.step
    memory.copied = 1
    memory.researched = True
    return nb.action


@dataclass
class BoaAgent:
    """Per-episode wrapper around :func:`boa_step`."""

    policy: object
    index: LatentIndex
    featurizer: FeaturizerSpec
    config: BoaConfig
    rng: RngState
    stack: FrameStack = field(default_factory=FrameStack)
    timer: object = None

    def reset(self) -> None:
        self.stack.reset()

    def act(self, observation: Observation) -> tuple[int, StepDiagnostics]:
        return boa_step(
            self.policy, self.index, self.featurizer, self.stack, observation,
            self.config, self.rng, self.timer,
        )


@dataclass
class ZipAgent:
    index: LatentIndex
    featurizer: FeaturizerSpec
    config: ZipConfig = field(default_factory=ZipConfig)
    stack: FrameStack = field(default_factory=FrameStack)
    memory: ZipMemory = field(default_factory=ZipMemory)
    timer: object = None

    def reset(self) -> None:
        self.stack.reset()
        self.memory.reset()

    def act(self, observation: Observation) -> int:
        return zip_step(
            self.index, self.featurizer, self.stack, observation, self.config, self.memory,
            self.timer,
        )
