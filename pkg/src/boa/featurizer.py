"""Deterministic stand-in encoder: seeded random projection of frame stacks.

The last :data:`STACK` observations are one-hot encoded cell by cell,
concatenated oldest first, multiplied by a fixed Gaussian matrix drawn from
the featurizer seed and L2-normalized. Because the input is one-hot the
product is just a sum of matrix rows, which keeps it exactly reproducible.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, DomainError
from .gridworld import NUM_CODES, EnvSpec, Observation

STACK = 4


def frame_features(view_size: int) -> int:
    """One-hot width of a single frame: every cell's code plus the carried flag."""
    return view_size * view_size * NUM_CODES + 1


@dataclass(frozen=True)
class FeaturizerSpec:
    seed: int
    dim: int = 64
    input_dim: int = STACK * frame_features(7)

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError("featurizer output dimension must be >= 1")
        if self.input_dim < 1 or self.input_dim % STACK:
            raise DomainError(f"input_dim must be a positive multiple of {STACK}")
        per = self.input_dim // STACK - 1
        size = int(round((per / NUM_CODES) ** 0.5))
        if size * size * NUM_CODES != per:
            raise DomainError(f"input_dim {self.input_dim} does not match any square view")

    @classmethod
    def for_env(cls, env: EnvSpec, seed: int, dim: int = 64) -> "FeaturizerSpec":
        return cls(seed=seed, dim=dim, input_dim=STACK * frame_features(env.view_size))

    @property
    def view_size(self) -> int:
        per = self.input_dim // STACK - 1
        return int(round((per / NUM_CODES) ** 0.5))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "dim": self.dim, "input_dim": self.input_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturizerSpec":
        return cls(seed=int(d["seed"]), dim=int(d["dim"]), input_dim=int(d["input_dim"]))

    def projection(self) -> np.ndarray:
        return _projection(self.seed, self.dim, self.input_dim)


@lru_cache(maxsize=16)
def _projection(seed: int, dim: int, input_dim: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed & 0xFFFFFFFFFFFFFFFF))
    m = rng.standard_normal((input_dim, dim))
    m.flags.writeable = False
    return m


class FrameStack:
    """The last few observations of one episode."""

    def __init__(self, size: int = STACK):
        self.frames: deque[Observation] = deque(maxlen=size)

    def reset(self) -> None:
        self.frames.clear()

    def push(self, obs: Observation) -> None:
        if not self.frames:
            # pad with the first frame so episode starts have no special latent
            self.frames.extend([obs] * self.frames.maxlen)
        else:
            self.frames.append(obs)

    def __len__(self) -> int:
        return len(self.frames)


def active_features(frames, view_size: int) -> np.ndarray:
    """Indices of the ones in the flattened one-hot encoding of ``frames``."""
    per = frame_features(view_size)
    cells = view_size * view_size
    base = np.arange(cells) * NUM_CODES
    out = []
    for i, obs in enumerate(frames):
        if obs.cells.shape != (view_size, view_size):
            raise DimensionError(
                f"observation window {obs.cells.shape} does not match featurizer view {view_size}"
            )
        off = i * per
        out.append(off + base + obs.cells.ravel().astype(np.int64))
        if obs.carried:
            out.append(np.array([off + per - 1]))
    return np.concatenate(out)


def encode(spec: FeaturizerSpec, stack: FrameStack) -> np.ndarray:
    if len(stack) != STACK:
        raise DimensionError(f"frame stack holds {len(stack)} frames, expected {STACK}")
    rows = spec.projection()[active_features(stack.frames, spec.view_size)]
    z = rows.sum(axis=0)
    return z / np.sqrt(np.dot(z, z))


def push_and_encode(spec: FeaturizerSpec, stack: FrameStack, obs: Observation) -> np.ndarray:
    """Advance the stack by one frame and return the unit-norm latent."""
    if obs.cells.shape != (spec.view_size, spec.view_size):
        raise DimensionError(
            f"observation window {obs.cells.shape} does not match featurizer view {spec.view_size}"
        )
    stack.push(obs)
    return encode(spec, stack)
