import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from robustps import dataset
from robustps.dataset import CorruptionSpec, Dataset, Schema
from robustps.errors import ConfigError, DataError

from conftest import random_dataset

SCHEMA = Schema.from_pairs([("age", "continuous"), ("grade", "discrete"), ("arm", "treatment")])


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_ingest_small_csv(tmp_path):
    p = write(tmp_path, "age,grade,arm\n50.5,II,1\n61,I,2\n70,II,1\n")
    data = dataset.ingest(p, SCHEMA)
    assert data.m == 3 and data.d == 2
    assert data.categories["grade"] == ("II", "I")
    assert data.discrete[:, 0].tolist() == [0, 1, 0]
    assert data.treatment.tolist() == [0, 1, 0]
    assert data.dropped == 0


def test_ingest_drops_incomplete_rows(tmp_path):
    p = write(tmp_path, "age,grade,arm\n50,II,1\n,I,2\n70,I,2\n40,II,1\n")
    data = dataset.ingest(p, SCHEMA)
    assert data.m == 3 and data.dropped == 1


def test_ingest_column_order_follows_header(tmp_path):
    p = write(tmp_path, "arm,grade,age\n1,II,50\n2,I,61\n")
    assert dataset.ingest(p, SCHEMA).continuous[:, 0].tolist() == [50.0, 61.0]


@pytest.mark.parametrize("text", [
    "age,grade\n1,a\n",                       # header mismatch
    "age,grade,arm\nold,a,1\nyoung,b,2\n",    # non-numeric continuous cell
    "age,grade,arm\n,a,1\n,b,2\n",            # nothing left after filtering
    "age,grade,arm\n1,a,1,9\n",               # ragged row
    "",                                       # empty file
])
def test_ingest_rejects_bad_files(tmp_path, text):
    with pytest.raises(DataError):
        dataset.ingest(write(tmp_path, text), SCHEMA)


def test_ingest_missing_file(tmp_path):
    with pytest.raises(DataError):
        dataset.ingest(tmp_path / "absent.csv", SCHEMA)


def test_schema_validation():
    with pytest.raises(ConfigError):
        Schema.from_pairs([("a", "continuous"), ("b", "continuous")])
    with pytest.raises(ConfigError):
        Schema.from_pairs([("a", "continuous"), ("a", "treatment")])
    with pytest.raises(ConfigError):
        Schema.from_pairs([("a", "ignore"), ("t", "treatment")])
    s = Schema.from_pairs([("a", "continuous"), ("id", "ignore"), ("t", "treatment")])
    assert Schema.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_dataset_invariants():
    data = random_dataset()
    with pytest.raises(ValueError):
        data.continuous[0, 0] = 1.0
    with pytest.raises(DataError):
        Dataset(data.schema, data.continuous[:2], data.discrete[:2], [0, 1],
                data.categories, data.treatment_labels)  # m < d
    with pytest.raises(DataError):
        Dataset(data.schema, data.continuous, data.discrete, np.zeros(data.m, int),
                data.categories, data.treatment_labels)  # absent class


def test_seer_shaped_counts(tables):
    data = dataset.synthesize(dataset.seer_like(), seed=3)
    assert data.m == tables["total_records"]
    assert data.class_counts().tolist() == tables["class_counts"]
    assert np.bincount(data.pattern).tolist() == tables["cluster_sizes"]


def test_seer_shaped_file_ingests_with_counts(tmp_path, tables):
    data = dataset.synthesize(dataset.seer_like(), seed=0)
    dataset.export_csv(data, tmp_path / "seer.csv")
    back = dataset.ingest(tmp_path / "seer.csv", data.schema)
    assert back.class_counts().tolist() == tables["class_counts"]


def test_corrupt_zero_rate_is_identity():
    data = random_dataset(m=50)
    out = dataset.corrupt(data, CorruptionSpec(0.0, seed=1))
    assert np.array_equal(out.treatment, data.treatment)
    assert not out.corrupted.any()


def test_corrupt_binomial_and_uniform_destinations():
    m, rate = 10_000, 0.4
    rng = np.random.default_rng(0)
    data = random_dataset(m=m, n_cont=1, n_disc=0)
    out = dataset.corrupt(data, CorruptionSpec(rate, seed=11))
    k = int(out.corrupted.sum())
    assert abs(k - m * rate) <= 3 * np.sqrt(m * rate * (1 - rate))
    flipped = out.corrupted
    assert np.all(out.treatment[flipped] != data.treatment[flipped])
    assert np.array_equal(out.treatment[~flipped], data.treatment[~flipped])
    # destination offset (1 or 2 steps ahead) should be a fair coin
    offset = (out.treatment[flipped] - data.treatment[flipped]) % 3
    counts = np.bincount(offset, minlength=3)[1:]
    assert stats.chisquare(counts).pvalue > 1e-3
    assert abs(counts[0] / k - 0.5) < 0.03
    # source data untouched
    assert not data.corrupted.any()
    del rng


def test_corrupt_two_classes_half_rate():
    data = random_dataset(m=4000, n_cont=1, n_disc=0, d=2)
    out = dataset.corrupt(data, CorruptionSpec(0.5, seed=2))
    assert np.all(out.treatment[out.corrupted] == 1 - data.treatment[out.corrupted])
    assert abs(out.corrupted.mean() - 0.5) < 0.03


@pytest.mark.parametrize("rate", [-0.1, 0.51])
def test_corruption_rate_bounds(rate):
    with pytest.raises(ConfigError):
        CorruptionSpec(rate)


def test_corruption_is_deterministic_and_manifested():
    data = random_dataset(m=200)
    spec = CorruptionSpec(0.2, seed=5)
    a, b = dataset.corrupt(data, spec), dataset.corrupt(data, spec)
    assert np.array_equal(a.treatment, b.treatment)
    man = dataset.corruption_manifest(a, spec)
    assert man["seed"] == 5 and man["rate"] == 0.2
    assert man["flipped"] == np.flatnonzero(a.corrupted).tolist()
    assert a.m == data.m


def test_synthesize_identity_assignment():
    data = dataset.synthesize(dataset.separated(m=300), seed=0)
    assert np.array_equal(data.treatment, data.pattern)


def test_synthesize_contingency_matches_assignment():
    gen = dataset.confounded(m=30_000, strength=0.6)
    data = dataset.synthesize(gen, seed=4)
    P = np.asarray(gen.assignment)
    c = np.asarray(gen.sizes)
    W = np.zeros_like(P)
    np.add.at(W, (data.treatment, data.pattern), 1)
    expected = P * c
    sd = np.sqrt(c * P * (1 - P))
    assert np.all(np.abs(W - expected) <= 4 * sd)
    # label marginals N = P c in expectation
    assert np.allclose(W.sum(axis=1), expected.sum(axis=1), rtol=0.03)


def test_synthetic_spec_validation():
    gen = dataset.separated()
    bad = gen.to_dict()
    bad["assignment"][0][0] = 0.5
    with pytest.raises(ConfigError):
        dataset.SyntheticSpec.from_dict(bad)
    bad = gen.to_dict()
    bad["sizes"][1] = 0
    with pytest.raises(ConfigError):
        dataset.SyntheticSpec.from_dict(bad)
    assert dataset.SyntheticSpec.from_dict(gen.to_dict()) == gen


def test_hamilton():
    assert dataset.hamilton(10, [1, 1, 1]).tolist() == [4, 3, 3]
    assert dataset.hamilton(7, [0.5, 0.25, 0.25]).tolist() == [3, 2, 2]
    assert dataset.hamilton(0, [1, 2]).tolist() == [0, 0]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(3, 30), n_cont=st.integers(0, 3), n_disc=st.integers(0, 3))
def test_export_ingest_round_trip(tmp_path_factory, seed, m, n_cont, n_disc):
    if n_cont + n_disc == 0:
        n_cont = 1
    data = random_dataset(seed, m=m, n_cont=n_cont, n_disc=n_disc)
    # ingest codes by first appearance, so compare after one canonical pass
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    dataset.export_csv(data, path)
    once = dataset.ingest(path, data.schema)
    dataset.export_csv(once, path)
    twice = dataset.ingest(path, data.schema)
    assert once.same_as(twice)
    assert np.array_equal(once.continuous, data.continuous)  # floats exact
    for name in data.schema.discrete:
        orig = [data.categories[name][c] for c in data.column(name)]
        back = [once.categories[name][c] for c in once.column(name)]
        assert orig == back


def test_round_trip_keeps_ignored_columns(tmp_path):
    schema = Schema.from_pairs([("id", "ignore"), ("x", "continuous"), ("t", "treatment")])
    p = write(tmp_path, "id,x,t\nA7,0.1,a\nB2,0.30000000000000004,b\n")
    data = dataset.ingest(p, schema)
    dataset.export_csv(data, tmp_path / "o.csv")
    assert (tmp_path / "o.csv").read_text() == p.read_text()


def test_subset_tracks_provenance():
    data = random_dataset(m=30)
    idx = np.sort(np.concatenate([np.flatnonzero(data.treatment == k)[:2] for k in range(3)]))
    sub = data.subset(idx)
    inner = np.arange(sub.m)[::-1]
    assert sub.subset(inner).source.tolist() == idx[inner].tolist()
