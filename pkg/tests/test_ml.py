import numpy as np
import pytest

from privshare.errors import EmptyFeatureSetError, EmptySampleError, LengthMismatchError, SingleClassError
from privshare.ml import (
    CLASSIFIERS,
    FLAG_NO_POSITIVE_PREDICTIONS,
    TaggedDataset,
    compare_cells,
    encode,
    precision_recall,
    run_experiment,
    stratified_split,
    train_predict,
)

from conftest import make_cohort, random_cohort


def _blobs(seed, n=200, gap=6.0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    centre = np.where(y[:, None] == 1, gap / 2, -gap / 2)
    pts = rng.normal(size=(n, 2)) + centre
    return make_cohort(numeric={"u": pts[:, 0], "v": pts[:, 1]}, sensitive={"s": rng.integers(0, 2, n)}, target=y)


# -- encoding ------------------------------------------------------------------------

def test_encode_numeric_plus_binary_categorical():
    cohort = make_cohort(numeric={"age": [1.0, 2.0, 3.0]}, categorical={"sex": ["F", "M", "F"]},
                         sensitive={"s": [0, 1, 0]})
    fm = encode(cohort, ["age", "sex"])
    assert fm.d == 1 + 2
    assert fm.feature_names == ["age", "sex=F", "sex=M"]
    assert fm.rows[:, 1:].tolist() == [[1, 0], [0, 1], [1, 0]]


def test_encode_constant_numeric_is_zero():
    cohort = make_cohort(numeric={"age": [7.0] * 4}, sensitive={"s": [0, 1, 0, 1]})
    assert np.all(encode(cohort, ["age"]).rows == 0.0)


def test_encode_provenance_round_trip():
    cohort = random_cohort(np.random.default_rng(0), 50)
    fm = encode(cohort)
    for j, name in enumerate(fm.feature_names):
        src = fm.source_column(j)
        assert name == src or name.startswith(src + "=")
    covered = sorted(j for lo, hi in fm.encoding.values() for j in range(lo, hi))
    assert covered == list(range(fm.d))
    with pytest.raises(IndexError):
        fm.source_column(fm.d)


def test_encode_uses_train_statistics():
    x = np.array([0.0, 2.0, 4.0, 100.0])
    cohort = make_cohort(numeric={"age": x}, sensitive={"s": [0, 1, 0, 1]})
    fm = encode(cohort, ["age"], fit_rows=np.array([0, 1, 2]))
    mu, sd = x[:3].mean(), x[:3].std()
    assert fm.rows[:, 0] == pytest.approx((x - mu) / sd)


def test_encode_rejects_leakage_and_empty():
    cohort = make_cohort(numeric={"age": [1.0, 2.0]}, sensitive={"s": [0, 1]}, non_sensitive={"uti": [1, 0]})
    with pytest.raises(AssertionError):
        encode(cohort, ["age", "y"])
    with pytest.raises(AssertionError):
        encode(cohort, ["age", "uti"])
    with pytest.raises(EmptyFeatureSetError):
        encode(cohort, [])
    assert "uti" not in encode(cohort).feature_names


# -- classifiers ---------------------------------------------------------------------

@pytest.mark.parametrize("cid", CLASSIFIERS)
def test_blobs_accuracy(cid):
    for seed in range(20):
        cohort = _blobs(seed)
        tr, te = stratified_split(cohort.labels, seed)
        fm = encode(cohort, fit_rows=tr)
        pred = train_predict(cid, fm.take(tr), fm.take(te), seed)
        assert np.mean(pred == fm.labels[te]) >= 0.95


def test_tree_memorizes_training_set():
    cohort = _blobs(0, gap=1.0)
    fm = encode(cohort)
    pred = train_predict("DT", fm, fm, 0)
    assert precision_recall(pred, fm.labels)[1] == 1.0


def test_null_model_precision_near_base_rate():
    precisions = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = 400
        y = (rng.random(n) < 0.5).astype(int)
        cohort = make_cohort(numeric={"a": rng.normal(size=n), "b": rng.normal(size=n)},
                             sensitive={"s": rng.integers(0, 2, n)}, target=y)
        tr, te = stratified_split(cohort.labels, seed)
        fm = encode(cohort, fit_rows=tr)
        p, _, flags = precision_recall(train_predict("LR", fm.take(tr), fm.take(te), seed), fm.labels[te])
        if not flags:
            precisions.append((p, y[te].mean()))
    p, base = np.mean(precisions, axis=0)
    assert abs(p - base) <= 0.05


def test_single_class_train_rejected():
    cohort = make_cohort(numeric={"a": [1.0, 2.0, 3.0]}, sensitive={"s": [0, 1, 0]}, target=[0, 0, 0])
    fm = encode(cohort)
    with pytest.raises(SingleClassError):
        train_predict("LR", fm, fm)


def test_unknown_classifier():
    fm = encode(_blobs(0))
    with pytest.raises(ValueError):
        train_predict("XGB", fm, fm)


# -- metrics -------------------------------------------------------------------------

def test_precision_recall_examples():
    assert precision_recall([1, 0, 1], [1, 0, 1])[:2] == (1.0, 1.0)
    labels = [1] + [0] * 3
    assert precision_recall([1] * 4, labels)[:2] == (0.25, 1.0)
    pred = [1, 1, 1, 1, 0, 0, 0]
    lab = [1, 1, 1, 0, 1, 1, 0]
    assert precision_recall(pred, lab)[:2] == (0.75, 0.6)
    with pytest.raises(LengthMismatchError):
        precision_recall([1, 0], [1])


def test_undefined_precision_flagged():
    p, r, flags = precision_recall([0, 0, 0], [1, 0, 0])
    assert (p, r) == (0.0, 0.0)
    assert FLAG_NO_POSITIVE_PREDICTIONS in flags


# -- experiment ----------------------------------------------------------------------

def test_stratified_split_preserves_ratio():
    labels = np.array([1] * 50 + [0] * 250)
    tr, te = stratified_split(labels, 3)
    assert len(te) == 60 and labels[te].sum() == 10
    assert not set(tr) & set(te)
    again = stratified_split(labels, 3)
    assert np.array_equal(again[1], te)


def test_identical_datasets_identical_samples():
    cohort = random_cohort(np.random.default_rng(1), 150)
    table = run_experiment([TaggedDataset("A", cohort), TaggedDataset("B", cohort)], iterations=1)
    for cid in CLASSIFIERS:
        a, b = table.cell("A", cid), table.cell("B", cid)
        assert [(s.precision, s.recall) for s in a] == [(s.precision, s.recall) for s in b]


def test_run_experiment_deterministic_and_parallel_equal():
    cohort = random_cohort(np.random.default_rng(2), 150)
    ds = [TaggedDataset("OR", cohort)]
    one = run_experiment(ds, iterations=3, classifiers=["LR", "DT", "NB"])
    two = run_experiment(ds, iterations=3, classifiers=["LR", "DT", "NB"])
    par = run_experiment(ds, iterations=3, classifiers=["LR", "DT", "NB"], n_jobs=2)
    assert one.to_frame().equals(two.to_frame())
    assert one.to_frame().equals(par.to_frame())
    frame = one.to_frame()
    assert list(frame.columns) == ["tag", "engine", "k", "classifier", "iteration", "precision", "recall", "flags"]
    assert frame[["precision", "recall"]].stack().between(0, 1).all()
    means = one.means()
    for _, row in means.iterrows():
        vals = one.values(row["tag"], row["classifier"], "recall")
        assert row["recall"] == pytest.approx(vals.mean(), abs=1e-12)
        assert len(vals) == 3


def test_fixed_split_mode_repeats_split():
    cohort = random_cohort(np.random.default_rng(4), 150)
    table = run_experiment([TaggedDataset("OR", cohort)], iterations=3, classifiers=["NB"], split_mode="fixed")
    assert len(set(table.values("OR", "NB", "recall").tolist())) == 1


def test_run_experiment_rejects_single_class():
    cohort = make_cohort(numeric={"a": [1.0, 2.0, 3.0]}, sensitive={"s": [0, 1, 0]}, target=[1, 1, 1])
    with pytest.raises(SingleClassError):
        run_experiment([TaggedDataset("X", cohort)], iterations=1)


# -- comparisons ---------------------------------------------------------------------

def test_compare_identical_samples():
    a = np.random.default_rng(0).normal(0.5, 0.02, 100)
    res = compare_cells(a, a.copy())
    assert res.test_name == "welch_t"
    assert res.p_value == 1.0 and res.pct_change == 0.0 and not res.significant


def test_compare_pct_change_examples():
    assert round(compare_cells([0.5793], [0.4775]).pct_change, 2) == -17.57
    assert round(compare_cells([0.6021], [0.3488]).pct_change, 2) == -42.07


def test_compare_test_selection():
    rng = np.random.default_rng(1)
    assert compare_cells(rng.normal(size=100), rng.normal(0.3, size=100)).test_name == "welch_t"
    assert compare_cells(rng.exponential(size=100), rng.exponential(size=100)).test_name == "mann_whitney_u"
    # fewer than 8 values cannot be gated, so the rank test is used
    assert compare_cells([0.1, 0.2, 0.3], [0.2, 0.3, 0.4]).test_name == "mann_whitney_u"


def test_compare_flag_exclusion():
    rng = np.random.default_rng(3)
    a = rng.normal(0.5, 0.02, 100)
    b = rng.normal(0.45, 0.02, 100)
    b[:20] = 0.0
    flags = np.zeros(100, dtype=bool)
    flags[:20] = True
    # the zeros would fail the gate; with 20% flagged they are set aside for it
    assert compare_cells(a, b).test_name == "mann_whitney_u"
    assert compare_cells(a, b, flagged_b=flags).test_name == "welch_t"


def test_compare_zero_baseline_and_empty():
    assert np.isnan(compare_cells([0.0, 0.0], [0.1, 0.2]).pct_change)
    with pytest.raises(EmptySampleError):
        compare_cells([], [0.1])
