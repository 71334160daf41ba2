import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boa.errors import BuildError, DimensionError, DomainError, FormatError, QueryError
from boa.latent_index import (
    IndexEntry,
    LatentIndex,
    Neighbor,
    action_counts,
    expert_distribution,
)


def naive_knn(latents, z, k):
    """Scalar full scan: squared distance per entry, then sort by (distance, id)."""
    q = [float(v) for v in np.asarray(z, dtype=np.float32)]
    scored = []
    for i, row in enumerate(np.asarray(latents, dtype=np.float32)):
        s = 0.0
        for a, b in zip(row.tolist(), q):
            s += (a - b) * (a - b)
        scored.append((s, i))
    scored.sort()
    return scored[:k]


def random_index(rng, n, d, num_actions=3):
    x = rng.standard_normal((n, d)).astype(np.float32)
    entries = [IndexEntry(x[i], int(rng.integers(num_actions)), i // 50, i % 50) for i in range(n)]
    return LatentIndex.build(entries, num_actions), x


def test_build_small():
    idx = LatentIndex.build([IndexEntry(np.array([0.0, float(i)]), i % 2, 0, i) for i in range(3)], 2)
    assert len(idx) == 3 and idx.dim == 2
    assert [nb.entry_id for nb in idx.query([0.0, 0.0], 3)] == [0, 1, 2]


def test_build_errors():
    with pytest.raises(BuildError):
        LatentIndex.build([])
    with pytest.raises(BuildError):
        LatentIndex.build([IndexEntry(np.zeros(2), 0, 0, 0), IndexEntry(np.zeros(3), 0, 0, 1)])
    with pytest.raises(BuildError):
        LatentIndex.build([IndexEntry(np.zeros(2), 0, 0, 0), IndexEntry(np.ones(2), 1, 0, 0)])
    with pytest.raises(BuildError):
        LatentIndex.build([IndexEntry(np.zeros(2), 3, 0, 0)], num_actions=3)


def test_index_is_immutable():
    idx, _ = random_index(np.random.default_rng(0), 10, 4)
    with pytest.raises(ValueError):
        idx.latents[0, 0] = 1.0


def test_identity_query():
    rng = np.random.default_rng(1)
    idx, x = random_index(rng, 200, 16)
    (nb,) = idx.query(x[37], 1)
    assert nb.entry_id == 37 and nb.distance == 0.0


def test_ties_go_to_lower_id():
    e = [IndexEntry(np.array([1.0, 0.0]), 0, 0, 0), IndexEntry(np.array([-1.0, 0.0]), 1, 0, 1),
         IndexEntry(np.array([0.0, 1.0]), 2, 0, 2), IndexEntry(np.array([5.0, 5.0]), 0, 0, 3)]
    idx = LatentIndex.build(e, 3)
    assert [nb.entry_id for nb in idx.query([0.0, 0.0], 2)] == [0, 1]
    assert [nb.entry_id for nb in idx.query([0.0, 0.0], 3)] == [0, 1, 2]


def test_query_errors():
    idx, _ = random_index(np.random.default_rng(0), 10, 4)
    with pytest.raises(QueryError):
        idx.query(np.zeros(4), 11)
    with pytest.raises(QueryError):
        idx.query(np.zeros(4), 0)
    with pytest.raises(DimensionError):
        idx.query(np.zeros(5), 1)
    with pytest.raises(DomainError):
        idx.query(np.full(4, np.nan), 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 400), st.integers(1, 32), st.integers(0, 2**32 - 1), st.data())
def test_matches_naive_scan(n, d, seed, data):
    rng = np.random.default_rng(seed)
    idx, x = random_index(rng, n, d)
    k = data.draw(st.integers(1, min(n, 100)))
    # a probe near a stored row, with some exact duplicates to exercise ties
    z = x[rng.integers(n)] if rng.random() < 0.3 else rng.standard_normal(d)
    got = idx.query(z, k)
    want = naive_knn(x, z, k)
    assert [nb.entry_id for nb in got] == [i for _, i in want]
    assert [nb.distance for nb in got] == [s for s, _ in want]


def test_duplicate_latents_exact():
    rng = np.random.default_rng(2)
    base = rng.standard_normal((5, 8)).astype(np.float32)
    x = np.repeat(base, 20, axis=0)
    idx = LatentIndex.build([IndexEntry(x[i], 0, i, 0) for i in range(len(x))], 1)
    for k in (1, 7, 20, 33, 100):
        got = idx.query(base[2], k)
        assert [nb.entry_id for nb in got] == [i for _, i in naive_knn(x, base[2], k)]


def test_distances_non_decreasing_and_length():
    idx, _ = random_index(np.random.default_rng(3), 300, 10)
    nbs = idx.query(np.zeros(10), 50)
    assert len(nbs) == 50
    d = [nb.distance for nb in nbs]
    assert d == sorted(d)


def test_single_distance_matches_scan():
    idx, _ = random_index(np.random.default_rng(4), 100, 12)
    z = np.random.default_rng(5).standard_normal(12)
    full = idx.squared_distances(z)
    assert all(idx.squared_distances_to(z, i) == full[i] for i in range(100))


def test_action_counts():
    def nbs(actions):
        return [Neighbor(i, 0.0, a, 0, i) for i, a in enumerate(actions)]

    np.testing.assert_array_equal(action_counts(nbs([0, 0, 2]), 3), [2, 0, 1])
    np.testing.assert_array_equal(action_counts(nbs([1]), 3), [0, 1, 0])
    with pytest.raises(DomainError):
        action_counts(nbs([3]), 3)


@given(st.integers(0, 2**32 - 1), st.integers(1, 60))
@settings(max_examples=30, deadline=None)
def test_counts_conserve_k(seed, k):
    idx, _ = random_index(np.random.default_rng(seed), 60, 6, num_actions=4)
    c = action_counts(idx.query(np.random.default_rng(seed + 1).standard_normal(6), k), 4)
    assert c.sum() == k


def test_expert_distribution():
    np.testing.assert_allclose(expert_distribution([7, 2, 1]), [0.7, 0.2, 0.1])
    np.testing.assert_array_equal(expert_distribution([5, 0, 0]), [1, 0, 0])
    np.testing.assert_allclose(expert_distribution([1, 1, 1]), [1 / 3] * 3)
    with pytest.raises(DomainError):
        expert_distribution([0, 0, 0])


def test_snapshot_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    idx, _ = random_index(rng, 3, 5)
    path = tmp_path / "a.idx"
    idx.save(path)
    back = LatentIndex.load(path)
    assert back.num_actions == idx.num_actions
    for z in rng.standard_normal((100, 5)):
        assert back.query(z, 3) == idx.query(z, 3)


def test_snapshot_header_layout(tmp_path):
    idx = LatentIndex.build([IndexEntry(np.array([1.5, -2.0], dtype=np.float32), 1, 7, 9)], 3)
    raw = idx.to_bytes()
    assert raw[:7] == b"BOAIDX1"
    assert np.frombuffer(raw[7:23], "<u4").tolist() == [1, 2, 3, 1]
    assert np.frombuffer(raw[23:31], "<f4").tolist() == [1.5, -2.0]
    assert np.frombuffer(raw[31:43], "<u4").tolist() == [1, 7, 9]
    assert len(raw) == 43


def test_snapshot_featurizer_trailer():
    feat = {"seed": 12, "dim": 2, "input_dim": 1180}
    idx = LatentIndex.build([IndexEntry(np.ones(2), 0, 0, 0)], 3, featurizer=feat)
    assert LatentIndex.from_bytes(idx.to_bytes()).featurizer == feat


def test_snapshot_errors(tmp_path):
    idx, _ = random_index(np.random.default_rng(7), 20, 4)
    raw = idx.to_bytes()
    with pytest.raises(FormatError):
        LatentIndex.from_bytes(raw[:-5])
    with pytest.raises(FormatError):
        LatentIndex.from_bytes(b"XXXXXXX" + raw[7:])
    bad_version = raw[:7] + (2).to_bytes(4, "little") + raw[11:]
    with pytest.raises(FormatError):
        LatentIndex.from_bytes(bad_version)
    with pytest.raises(FormatError):
        LatentIndex.from_bytes(raw[:10])


def test_large_roundtrip_double_save(tmp_path):
    rng = np.random.default_rng(8)
    x = rng.standard_normal((30_000, 64)).astype(np.float32)
    entries = [IndexEntry(x[i], i % 3, i // 200, i % 200) for i in range(len(x))]
    t0 = time.perf_counter()
    idx = LatentIndex.build(entries, 3)
    assert time.perf_counter() - t0 < 1.0
    idx.save(tmp_path / "a.idx")
    LatentIndex.load(tmp_path / "a.idx").save(tmp_path / "b.idx")
    assert (tmp_path / "a.idx").read_bytes() == (tmp_path / "b.idx").read_bytes()
