import struct
from collections import Counter

import numpy as np
import pytest

from cvocfsl.episodes import (MAGIC, EmbeddingDataset, SemanticTable, generate_synthetic_task,
                              kmeans_baseline, load_embeddings, load_semantic_table, sample_episode,
                              save_embeddings, save_semantic_table)
from cvocfsl.errors import InputError


def dataset(rng, classes=8, per=40, d=6, semantic=False):
    labels = np.repeat(np.arange(classes), per)
    feats = (rng.standard_normal((classes * per, d)) + 5 * labels[:, None] * 0.1).astype(np.float32)
    sem = SemanticTable(rng.standard_normal((classes, 3)), list(range(classes))) if semantic else None
    return EmbeddingDataset(feats, labels, semantic=sem)


def test_synthetic_shapes_and_hidden_labels():
    ep = generate_synthetic_task(n_way=5, k_shot=2, n_query=3, n_unlabeled=10, distractor_classes=3,
                                 distractor_per_class=4, seed=1, d=7)
    assert ep.support.shape == (10, 7) and ep.query.shape == (15, 7) and ep.pool.shape == (62, 7)
    assert np.array_equal(np.bincount(ep.support_labels), [2] * 5)
    gt = ep.ground_truth()
    assert gt.pool_distractor.sum() == 12 and np.all(gt.pool_labels[gt.pool_distractor] == -1)
    for attr in ("query_labels", "pool_labels", "pool_distractor"):
        assert not hasattr(ep, attr)


def test_synthetic_same_seed_same_bytes():
    a = generate_synthetic_task(seed=9, d_t=4)
    b = generate_synthetic_task(seed=9, d_t=4)
    for x, y in ((a.support, b.support), (a.pool, b.pool), (a.query, b.query),
                 (a.semantic.vectors, b.semantic.vectors)):
        assert x.tobytes() == y.tobytes()
    c = generate_synthetic_task(seed=10)
    assert not np.array_equal(a.support, c.support)


def test_synthetic_center_spacing():
    from cvocfsl.episodes import class_centers
    from cvocfsl.rng import substream
    C = class_centers(5, 32, 2.0, substream(0, "x"))
    D = np.linalg.norm(C[:, None] - C[None], axis=2)
    np.testing.assert_allclose(D[~np.eye(5, dtype=bool)], 2.0, rtol=1e-12)


def test_synthetic_errors():
    with pytest.raises(InputError):
        generate_synthetic_task(n_classes=4, n_way=5)
    with pytest.raises(InputError):
        generate_synthetic_task(k_shot=0)
    with pytest.raises(InputError):
        generate_synthetic_task(separation=-1)


def test_zero_separation_is_chance():
    acc = [kmeans_baseline(generate_synthetic_task(separation=0.0, d=8, n_unlabeled=20, seed=s)).pool_accuracy
           for s in range(500)]
    m = np.mean(acc)
    ci = 1.96 * np.std(acc, ddof=1) / np.sqrt(len(acc))
    assert abs(m - 0.2) < max(ci, 0.02)


def test_csv_round_trip(tmp_path, rng):
    ds = dataset(rng)
    save_embeddings(ds, tmp_path / "e.csv", "csv")
    back = load_embeddings(tmp_path / "e.csv")
    assert back.features.dtype == np.float32
    assert back.features.tobytes() == ds.features.tobytes()
    assert np.array_equal(back.labels, ds.labels)


def test_binary_round_trip(tmp_path, rng):
    ds = dataset(rng)
    save_embeddings(ds, tmp_path / "e.bin", "binary")
    raw = (tmp_path / "e.bin").read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack("<III", raw[4:16]) == (1, ds.features.shape[0], ds.features.shape[1])
    back = load_embeddings(tmp_path / "e.bin", "binary")
    assert back.features.tobytes() == ds.features.tobytes()
    assert np.array_equal(back.labels, ds.labels)


def test_small_csv(tmp_path):
    p = tmp_path / "two.csv"
    p.write_text("label,f0,f1,f2\n0,1,2,3\n1,4,5,6\n")
    ds = load_embeddings(p)
    assert (ds.features.shape, ds.num_classes, ds.dim) == ((2, 3), 2, 3)


@pytest.mark.parametrize("body, fragment", [
    ("label,f0,f1\n0,1,2\n1,NaN,3\n", "row 3"),
    ("label,f0,f1\n0,1,2\n1,3\n", "row 3"),
    ("label,f0,f1\n0,1,x\n", "row 2"),
    ("lbl,f0\n0,1\n", "header"),
])
def test_csv_errors_name_the_row(tmp_path, body, fragment):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(InputError, match=fragment):
        load_embeddings(p)


def test_binary_errors(tmp_path, rng):
    ds = dataset(rng, classes=2, per=3)
    save_embeddings(ds, tmp_path / "e.bin", "binary")
    raw = bytearray((tmp_path / "e.bin").read_bytes())
    (tmp_path / "trunc.bin").write_bytes(bytes(raw[:-2]))
    with pytest.raises(InputError):
        load_embeddings(tmp_path / "trunc.bin", "binary")
    bad = bytearray(raw)
    bad[:4] = b"XXXX"
    (tmp_path / "magic.bin").write_bytes(bytes(bad))
    with pytest.raises(InputError, match="magic"):
        load_embeddings(tmp_path / "magic.bin", "binary")
    nan = bytearray(raw)
    off = 16 + 4 * 6 + 4 * (2 * 6 + 1)
    nan[off:off + 4] = np.float32(np.nan).tobytes()
    (tmp_path / "nan.bin").write_bytes(bytes(nan))
    with pytest.raises(InputError, match="row 2"):
        load_embeddings(tmp_path / "nan.bin", "binary")


def test_sparse_labels_rejected():
    with pytest.raises(InputError):
        EmbeddingDataset(np.zeros((2, 2), dtype=np.float32), np.array([0, 2]))


def test_semantic_table_round_trip(tmp_path, rng):
    t = SemanticTable(rng.standard_normal((3, 4)), [5, 1, 9])
    save_semantic_table(t, tmp_path / "s.csv")
    back = load_semantic_table(tmp_path / "s.csv")
    assert back.class_ids == [5, 1, 9]
    assert np.array_equal(back.vectors, t.vectors)
    assert np.array_equal(back.lookup([9]), t.vectors[[2]])
    with pytest.raises(InputError):
        back.lookup([2])


def test_sample_episode_disjoint_and_deterministic(rng):
    ds = dataset(rng, semantic=True)
    ep = sample_episode(ds, 5, 1, 5, 30, distractor_classes=3, distractor_per_class=30, seed=4)
    idx = ep.source_indices
    sets = [set(idx[k].tolist()) for k in ("support", "query", "pool")]
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    assert ep.pool.shape[0] == 5 * 30 + 3 * 30 == 240
    chosen = set(ep.class_ids)
    dl = ds.labels[idx["pool"][ep.ground_truth().pool_distractor]]
    assert not (set(dl.tolist()) & chosen)
    np.testing.assert_array_equal(ep.semantic.vectors, ds.semantic.lookup(ep.class_ids))
    again = sample_episode(ds, 5, 1, 5, 30, 3, 30, seed=4)
    assert again.support.tobytes() == ep.support.tobytes() and again.pool.tobytes() == ep.pool.tobytes()


def test_sample_episode_needs_enough_rows(rng):
    ds = dataset(rng, per=10)
    sample_episode(ds, 5, 1, 4, 5, seed=0)
    with pytest.raises(InputError):
        sample_episode(ds, 5, 1, 4, 6, seed=0)


def test_class_pair_frequencies_are_uniform(rng):
    ds = dataset(rng, classes=4, per=3, d=2)
    counts = Counter(tuple(sorted(sample_episode(ds, 2, 1, 1, 1, seed=s).class_ids)) for s in range(10000))
    assert len(counts) == 6
    p = 1 / 6
    sd = np.sqrt(10000 * p * (1 - p))
    for v in counts.values():
        assert abs(v - 10000 * p) <= 3 * sd


def test_kmeans_baseline():
    ep = generate_synthetic_task(separation=40.0, d=16, seed=2)
    assert kmeans_baseline(ep, iters=1).pool_accuracy == 1.0
    ep = generate_synthetic_task(separation=2.0, d=16, seed=3)
    zero = kmeans_baseline(ep, iters=0)
    d2 = ((ep.pool[:, None] - ep.support[None]) ** 2).sum(2)
    assert np.array_equal(zero.assignments[5:], np.argmin(d2, axis=1))
    assert np.array_equal(zero.assignments[:5], ep.support_labels)
    a, b = kmeans_baseline(ep), kmeans_baseline(ep)
    assert np.array_equal(a.assignments, b.assignments)
