import numpy as np
import pytest

from boa.errors import DimensionError, DomainError
from boa.featurizer import STACK, FeaturizerSpec, FrameStack, encode, push_and_encode
from boa.gridworld import NUM_CODES, EnvSpec, Observation


def random_obs(rng, size=7, carried=None):
    cells = rng.integers(0, NUM_CODES, (size, size))
    return Observation(cells, bool(rng.integers(2)) if carried is None else carried)


@pytest.fixture
def spec():
    return FeaturizerSpec(seed=3)


def test_spec_for_env():
    f = FeaturizerSpec.for_env(EnvSpec("one_room", view_radius=2), seed=1, dim=16)
    assert f.view_size == 5 and f.input_dim == STACK * (25 * NUM_CODES + 1)
    with pytest.raises(DomainError):
        FeaturizerSpec(seed=0, dim=0)
    with pytest.raises(DomainError):
        FeaturizerSpec(seed=0, input_dim=17)


def test_deterministic(spec):
    rng = np.random.default_rng(0)
    seq = [random_obs(rng) for _ in range(10)]
    a, b = FrameStack(), FrameStack()
    za = [push_and_encode(spec, a, o) for o in seq]
    zb = [push_and_encode(FeaturizerSpec(seed=3), b, o) for o in seq]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(za, zb))


def test_unit_norm(spec):
    rng = np.random.default_rng(1)
    stack = FrameStack()
    for _ in range(50):
        z = push_and_encode(spec, stack, random_obs(rng))
        assert z.shape == (64,)
        assert abs(np.linalg.norm(z) - 1.0) < 1e-9


def test_padding_and_reset(spec):
    rng = np.random.default_rng(2)
    f, g = random_obs(rng), random_obs(rng)
    stack = FrameStack()
    push_and_encode(spec, stack, g)
    push_and_encode(spec, stack, random_obs(rng))
    stack.reset()
    stack.reset()
    assert len(stack) == 0
    z = push_and_encode(spec, stack, f)
    assert list(stack.frames) == [f, f, f, f]
    fresh = FrameStack()
    assert z.tobytes() == push_and_encode(spec, fresh, f).tobytes()


def test_window_of_four(spec):
    rng = np.random.default_rng(3)
    old = random_obs(rng)
    recent = [random_obs(rng) for _ in range(4)]
    a = FrameStack()
    for o in [old] + recent:
        za = push_and_encode(spec, a, o)
    c = FrameStack()
    c.frames.extend(recent)
    assert za.tobytes() == encode(spec, c).tobytes()


def test_shape_mismatch(spec):
    with pytest.raises(DimensionError):
        push_and_encode(spec, FrameStack(), Observation(np.zeros((5, 5))))


def test_no_collisions_one_frame_apart(spec):
    rng = np.random.default_rng(4)
    seen = 0
    for _ in range(10_000):
        frames = [random_obs(rng, carried=False) for _ in range(STACK)]
        i = int(rng.integers(STACK))
        changed = frames[i].cells.copy()
        r, c = rng.integers(7, size=2)
        changed[r, c] = (changed[r, c] + 1 + rng.integers(NUM_CODES - 1)) % NUM_CODES
        other = list(frames)
        other[i] = Observation(changed)
        s1, s2 = FrameStack(), FrameStack()
        s1.frames.extend(frames)
        s2.frames.extend(other)
        seen += encode(spec, s1).tobytes() == encode(spec, s2).tobytes()
    assert seen == 0


def test_squared_distances_bounded(spec):
    rng = np.random.default_rng(5)
    zs = []
    stack = FrameStack()
    for _ in range(40):
        zs.append(push_and_encode(spec, stack, random_obs(rng)))
    z = np.array(zs)
    d = ((z[:, None, :] - z[None, :, :]) ** 2).sum(-1)
    assert d.min() >= 0 and d.max() <= 4 + 1e-12
