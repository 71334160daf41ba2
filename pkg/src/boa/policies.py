"""Base imitation policies and their on-disk format.

Two fitted policies stand in for the neural ones:

* :class:`TabularBC` maps an exact observation to smoothed, tempered action
  counts. It is sharp and fails hard on unseen observations, like an
  overconfident behavior-cloning network.
* :class:`LinearBC` is a softmax-linear model over featurizer latents,
  trained by full-batch gradient descent on cross-entropy. Its outputs are
  smooth.

:class:`DegradedPolicy` mixes any policy with the uniform distribution (and
optionally permutes its actions) to inject controlled failures.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, FitError, FormatError
from .gridworld import Observation

MAGIC = b"BOAPOL1\n"
_U32 = struct.Struct("<I")


def observation_hash(obs: Observation) -> int:
    """Stable 64-bit hash of the canonical observation bytes."""
    return int.from_bytes(hashlib.blake2b(obs.to_bytes(), digest_size=8).digest(), "little")


def _tempered(counts: np.ndarray, beta: float, tau: float) -> np.ndarray:
    # (count + beta) ** (1 / tau), normalized in log space
    with np.errstate(divide="ignore"):
        logw = np.log(counts + beta) / tau
    if np.all(np.isneginf(logw)):
        return np.full(counts.size, 1.0 / counts.size)
    w = np.exp(logw - logw.max())
    return w / w.sum()


@dataclass
class TabularBC:
    num_actions: int
    beta: float = 0.01
    tau: float = 1.0
    table: dict[int, np.ndarray] = field(default_factory=dict)

    kind = "tabular"
    input_kind = "observation"

    def distribution(self, obs: Observation) -> np.ndarray:
        counts = self.table.get(observation_hash(obs))
        if counts is None:
            return np.full(self.num_actions, 1.0 / self.num_actions)
        return _tempered(counts.astype(np.float64), self.beta, self.tau)

    def hyperparameters(self) -> dict:
        return {"beta": self.beta, "tau": self.tau}


def fit_tabular_bc(pairs, num_actions: int, beta: float = 0.01, tau: float = 1.0) -> TabularBC:
    """Count (observation, action) pairs; ``pairs`` yields ``(Observation, int)``."""
    if beta < 0 or tau <= 0:
        raise FitError("need beta >= 0 and tau > 0")
    table: dict[int, np.ndarray] = {}
    for obs, action in pairs:
        if not 0 <= action < num_actions:
            raise FitError(f"action {action} outside [0, {num_actions})")
        row = table.setdefault(observation_hash(obs), np.zeros(num_actions, dtype=np.int64))
        row[action] += 1
    if not table:
        raise FitError("cannot fit a policy on an empty dataset")
    return TabularBC(num_actions, beta, tau, table)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LinearBC:
    weights: np.ndarray  # (K, d)
    bias: np.ndarray  # (K,)
    epochs: int = 0
    learning_rate: float = 1.0
    seed: int = 0

    kind = "linear"
    input_kind = "latent"

    @property
    def num_actions(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def distribution(self, latent) -> np.ndarray:
        z = np.asarray(latent, dtype=np.float64)
        if z.shape != (self.dim,):
            raise DimensionError(f"latent has shape {z.shape}, policy expects ({self.dim},)")
        w = self.weights.astype(np.float64)
        return softmax(w @ z + self.bias.astype(np.float64))

    def hyperparameters(self) -> dict:
        return {"epochs": self.epochs, "learning_rate": self.learning_rate, "seed": self.seed}


def cross_entropy(weights, bias, latents, actions):
    """Mean cross-entropy of a softmax-linear model and its gradients."""
    logits = latents @ weights.T + bias
    logits = logits - logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    n = latents.shape[0]
    loss = -logp[np.arange(n), actions].mean()
    delta = np.exp(logp)
    delta[np.arange(n), actions] -= 1.0
    delta /= n
    return loss, delta.T @ latents, delta.sum(axis=0)


def fit_linear_bc(
    latents,
    actions,
    num_actions: int,
    epochs: int = 200,
    learning_rate: float = 1.0,
    seed: int = 0,
    init_scale: float = 0.0,
) -> tuple[LinearBC, list[float]]:
    """Full-batch gradient descent on cross-entropy; returns the policy and loss history.

    With unit-norm latents the loss is smooth with constant at most 1, so
    any ``learning_rate <= 2`` keeps the loss non-increasing.
    """
    x = np.asarray(latents, dtype=np.float64)
    y = np.asarray(actions, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise FitError(f"latents must be a non-empty (n, d) array, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise FitError("need exactly one action per latent")
    if np.any(y < 0) or np.any(y >= num_actions):
        raise FitError(f"actions must lie in [0, {num_actions})")
    rng = np.random.Generator(np.random.PCG64(seed))
    w = init_scale * rng.standard_normal((num_actions, x.shape[1]))
    b = np.zeros(num_actions)
    history = []
    for _ in range(epochs):
        loss, gw, gb = cross_entropy(w, b, x, y)
        history.append(float(loss))
        w -= learning_rate * gw
        b -= learning_rate * gb
    history.append(float(cross_entropy(w, b, x, y)[0]))
    policy = LinearBC(
        w.astype(np.float32), b.astype(np.float32), epochs, learning_rate, seed
    )
    return policy, history


@dataclass
class DegradedPolicy:
    base: object
    epsilon: float
    permutation: tuple[int, ...] | None = None

    kind = "degraded"

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise DomainError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.permutation is not None:
            perm = tuple(int(i) for i in self.permutation)
            if sorted(perm) != list(range(self.num_actions)):
                raise DomainError(f"{perm} is not a permutation of {self.num_actions} actions")
            self.permutation = perm

    @property
    def num_actions(self) -> int:
        return self.base.num_actions

    @property
    def input_kind(self) -> str:
        return self.base.input_kind

    def distribution(self, x) -> np.ndarray:
        p = self.base.distribution(x)
        if self.permutation is not None:
            q = np.empty_like(p)
            q[list(self.permutation)] = p
            p = q
        if self.epsilon == 0.0:
            return p
        return (1.0 - self.epsilon) * p + self.epsilon / p.size

    def hyperparameters(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "permutation": list(self.permutation) if self.permutation else None,
        }


def degrade(policy, epsilon: float, permutation=None) -> DegradedPolicy:
    """Mix ``policy`` with the uniform distribution: (1 - eps) * p + eps / K."""
    return DegradedPolicy(policy, float(epsilon), permutation)


def policy_distribution(policy, observation: Observation | None = None, latent=None) -> np.ndarray:
    """Action distribution of any policy, fed whichever input it consumes."""
    if policy.input_kind == "observation":
        if observation is None:
            raise DimensionError("this policy needs an observation")
        return policy.distribution(observation)
    if latent is None:
        raise DimensionError("this policy needs a latent")
    return policy.distribution(latent)


# persistence ----------------------------------------------------------------


def _header(policy) -> dict:
    head = {
        "kind": policy.kind,
        "K": policy.num_actions,
        "d": getattr(policy, "dim", 0),
        "hyperparameters": policy.hyperparameters(),
    }
    if isinstance(policy, DegradedPolicy):
        head["base"] = _header(policy.base)
    return head


def _payload(policy) -> bytes:
    if isinstance(policy, DegradedPolicy):
        return _payload(policy.base)
    if isinstance(policy, TabularBC):
        rec = np.zeros(
            len(policy.table), dtype=[("hash", "<u8"), ("counts", "<u4", (policy.num_actions,))]
        )
        for i, key in enumerate(sorted(policy.table)):
            rec[i] = (key, policy.table[key])
        return rec.tobytes()
    if isinstance(policy, LinearBC):
        return policy.weights.astype("<f4").tobytes() + policy.bias.astype("<f4").tobytes()
    raise FormatError(f"cannot serialize {type(policy).__name__}")


def policy_to_bytes(policy, metadata: dict | None = None) -> bytes:
    head = _header(policy)
    if metadata:
        head["metadata"] = metadata
    head_bytes = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + _U32.pack(len(head_bytes)) + head_bytes + _payload(policy)


def _from_parts(head: dict, payload: bytes):
    kind = head.get("kind")
    k = int(head["K"])
    hp = head["hyperparameters"]
    if kind == "degraded":
        base = _from_parts(head["base"], payload)
        return DegradedPolicy(base, float(hp["epsilon"]), hp.get("permutation"))
    if kind == "tabular":
        dtype = np.dtype([("hash", "<u8"), ("counts", "<u4", (k,))])
        if len(payload) % dtype.itemsize:
            raise FormatError("tabular policy payload is truncated")
        rec = np.frombuffer(payload, dtype=dtype)
        table = {int(h): c.astype(np.int64) for h, c in zip(rec["hash"], rec["counts"])}
        return TabularBC(k, float(hp["beta"]), float(hp["tau"]), table)
    if kind == "linear":
        d = int(head["d"])
        if len(payload) != 4 * (k * d + k):
            raise FormatError("linear policy payload has the wrong size")
        flat = np.frombuffer(payload, dtype="<f4")
        return LinearBC(
            flat[: k * d].reshape(k, d).astype(np.float32),
            flat[k * d :].astype(np.float32),
            int(hp["epochs"]),
            float(hp["learning_rate"]),
            int(hp["seed"]),
        )
    raise FormatError(f"unknown policy kind {kind!r}")


def policy_from_bytes(data: bytes):
    """Inverse of :func:`policy_to_bytes`; returns ``(policy, metadata)``."""
    if data[: len(MAGIC)] != MAGIC or len(data) < len(MAGIC) + 4:
        raise FormatError("not a policy file")
    (n,) = _U32.unpack_from(data, len(MAGIC))
    start = len(MAGIC) + 4
    if len(data) < start + n:
        raise FormatError("policy header is truncated")
    try:
        head = json.loads(data[start : start + n])
    except ValueError as exc:
        raise FormatError(f"policy header is not JSON: {exc}") from exc
    try:
        policy = _from_parts(head, data[start + n :])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed policy header: {exc}") from exc
    return policy, head.get("metadata", {})


def save_policy(policy, path, metadata: dict | None = None) -> None:
    Path(path).write_bytes(policy_to_bytes(policy, metadata))


def load_policy(path):
    return policy_from_bytes(Path(path).read_bytes())
