"""CSV loading, scaffold splitting, forest training, and AUC scoring."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attrilens._data import data_path
from attrilens.mlpipe import (
    CsvSchema,
    DegenerateLabels,
    EmptyDataset,
    ForestConfig,
    LengthMismatch,
    MissingColumn,
    auc_score,
    eval_auc,
    eval_predictions,
    featurize,
    load_csv,
    load_forest,
    predict_proba,
    save_forest,
    scaffold_split,
    top_attributes,
    train_forest,
)
from attrilens.molgraph import scaffold_key
from attrilens.response import parse_response, render_response


def _write_csv(path, rows, header="smiles,label"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def test_load_csv_happy_path(tmp_path):
    path = _write_csv(tmp_path / "d.csv",
                      ["CCO,True", "c1ccccc1,False", "CCN,1", "CCC,0"])
    out = load_csv(path)
    assert len(out) == 4
    assert out.skipped == 0
    assert [r.label for r in out.records] == [True, False, True, False]


def test_load_csv_skips_unparseable_smiles(tmp_path):
    path = _write_csv(tmp_path / "d.csv",
                      ["CCO,True", "C(C,False", "[Zz]zz,True", "CCC,False"])
    out = load_csv(path)
    assert len(out) == 2
    assert out.skipped == 2


def test_load_csv_missing_column(tmp_path):
    path = _write_csv(tmp_path / "d.csv", ["CCO,True"],
                      header="structure,label")
    with pytest.raises(MissingColumn):
        load_csv(path)


def test_load_csv_empty(tmp_path):
    path = _write_csv(tmp_path / "d.csv", ["C(C,True"])
    with pytest.raises(EmptyDataset):
        load_csv(path)


def test_load_csv_strict_labels(tmp_path):
    path = _write_csv(tmp_path / "d.csv", ["CCO,maybe"])
    with pytest.raises(ValueError):
        load_csv(path)


def test_load_csv_regression_labels(tmp_path):
    path = _write_csv(tmp_path / "d.csv", ["CCO,-1.25", "CCC,0.5"])
    out = load_csv(path, CsvSchema(task="regression"))
    assert [r.label for r in out.records] == [-1.25, 0.5]


def test_load_csv_custom_columns(tmp_path):
    path = _write_csv(tmp_path / "d.csv", ["CCO;ignored", ],
                      header="mol;p_np")
    # semicolon is not a CSV separator here; build a real custom-col file
    path.write_text("mol,p_np\nCCO,True\n")
    out = load_csv(path, CsvSchema(smiles_col="mol", label_col="p_np"))
    assert len(out) == 1


# ---------------------------------------------------------------------------
# scaffold split
# ---------------------------------------------------------------------------


def test_single_scaffold_dataset_all_in_train(tmp_path):
    rows = [f"{'C' * k}c1ccccc1,True" for k in range(1, 11)]
    out = load_csv(_write_csv(tmp_path / "d.csv", rows))
    train, valid, test = scaffold_split(out.records)
    assert len(train) == 10 and not valid and not test


def test_split_partitions_without_scaffold_leak():
    out = load_csv(data_path("bbbp_synthetic.csv"))
    train, valid, test = scaffold_split(out.records)
    assert len(train) + len(valid) + len(test) == len(out)
    ids = lambda part: {id(r) for r in part}
    assert not (ids(train) & ids(valid))
    assert not (ids(train) & ids(test))
    assert not (ids(valid) & ids(test))
    keys = lambda part: {scaffold_key(r.molecule) for r in part}
    assert not (keys(train) & keys(valid))
    assert not (keys(train) & keys(test))
    assert not (keys(valid) & keys(test))


def test_split_deterministic():
    out = load_csv(data_path("bbbp_synthetic.csv"))
    a = scaffold_split(out.records)
    b = scaffold_split(out.records)
    for part_a, part_b in zip(a, b):
        assert [r.smiles for r in part_a] == [r.smiles for r in part_b]


def test_split_respects_fractions(tmp_path):
    out = load_csv(data_path("bbbp_synthetic.csv"))
    train, valid, test = scaffold_split(out.records, (0.5, 0.25, 0.25))
    n = len(out)
    # groups are 4 records each, so phase cutoffs land exactly
    assert (len(train), len(valid), len(test)) == (n // 2, n // 4, n // 4)


@pytest.mark.parametrize("fractions", [(0.5, 0.5), (0.8, 0.1, 0.2),
                                       (-0.1, 0.6, 0.5)])
def test_split_validates_fractions(fractions, tmp_path):
    rows = ["CCO,True", "CCN,False"]
    out = load_csv(_write_csv(tmp_path / "d.csv", rows))
    with pytest.raises(ValueError):
        scaffold_split(out.records, fractions)


def test_split_preserves_input_order_within_parts(tmp_path):
    rows = ["Cc1ccccc1,True", "CCc1ccccc1,False", "Cc1ccncc1,True",
            "CCCC,False", "CCCCC,True", "C1CCCCC1,False"]
    out = load_csv(_write_csv(tmp_path / "d.csv", rows))
    train, valid, test = scaffold_split(out.records, (0.5, 0.25, 0.25))
    order = {r.smiles: i for i, r in enumerate(out.records)}
    for part in (train, valid, test):
        indices = [order[r.smiles] for r in part]
        assert indices == sorted(indices)


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------


def test_featurize_shape_and_values(tmp_path):
    out = load_csv(_write_csv(tmp_path / "d.csv", ["CCO,True", "CCC,False"]))
    X = featurize(out.records, ["MolWt", "NumHDonors"])
    assert X.shape == (2, 2)
    assert X[0, 0] == pytest.approx(46.069, abs=0.01)
    assert X[0, 1] == 1.0 and X[1, 1] == 0.0


def test_featurize_uses_largest_component(tmp_path):
    out = load_csv(_write_csv(tmp_path / "d.csv", ["CCO.O,True"]))
    X = featurize(out.records, ["HeavyAtomCount"])
    assert X[0, 0] == 3.0


# ---------------------------------------------------------------------------
# forest
# ---------------------------------------------------------------------------


def _separable_records(tmp_path, n=30):
    # long alkanes heavy, short alcohols light: HeavyAtomCount separates
    rows = [f"{'C' * (10 + i % 5)},True" for i in range(n // 2)]
    rows += [f"{'C' * (1 + i % 3)}O,False" for i in range(n // 2)]
    return load_csv(_write_csv(tmp_path / "sep.csv", rows)).records


def test_forest_learns_separable_data(tmp_path):
    records = _separable_records(tmp_path)
    model = train_forest(records, ["MolWt", "HeavyAtomCount"],
                         ForestConfig(n_trees=20, max_depth=3, seed=1))
    assert eval_auc(model, records) == 1.0


def _noisy_records(tmp_path):
    # MolWt correlates with the label but flips keep it non-separable, so
    # the bootstrap draws actually matter
    rows = []
    for i in range(12):
        label = (i % 4 != 0)
        rows.append(f"{'C' * (8 + i)},{label}")
    for i in range(12):
        label = (i % 4 == 0)
        rows.append(f"{'C' * (1 + i % 4)}O,{label}")
    return load_csv(_write_csv(tmp_path / "noisy.csv", rows)).records


def test_forest_deterministic_per_seed(tmp_path):
    records = _noisy_records(tmp_path)
    cfg = ForestConfig(n_trees=10, max_depth=4, seed=7)
    a = train_forest(records, ["MolWt"], cfg)
    b = train_forest(records, ["MolWt"], cfg)
    X = featurize(records, ["MolWt"])
    assert np.array_equal(predict_proba(a, X), predict_proba(b, X))
    c = train_forest(records, ["MolWt"], ForestConfig(10, 4, seed=8))
    assert not np.array_equal(predict_proba(a, X), predict_proba(c, X))


def test_forest_rejects_single_class(tmp_path):
    out = load_csv(_write_csv(tmp_path / "d.csv", ["CCO,True", "CCC,True"]))
    with pytest.raises(DegenerateLabels):
        train_forest(out.records, ["MolWt"])


def test_forest_probabilities_bounded(tmp_path):
    records = _separable_records(tmp_path)
    model = train_forest(records, ["MolWt", "NumHDonors"],
                         ForestConfig(n_trees=15, max_depth=2, seed=3))
    proba = predict_proba(model, featurize(records, ["MolWt", "NumHDonors"]))
    assert np.all(proba >= 0.0) and np.all(proba <= 1.0)


def test_forest_save_load_roundtrip(tmp_path):
    records = _separable_records(tmp_path)
    model = train_forest(records, ["MolWt", "HeavyAtomCount"],
                         ForestConfig(n_trees=8, max_depth=3, seed=2))
    path = tmp_path / "model.txt"
    save_forest(model, path)
    back = load_forest(path)
    X = featurize(records, ["MolWt", "HeavyAtomCount"])
    assert np.array_equal(predict_proba(model, X), predict_proba(back, X))
    assert back.feature_names == model.feature_names


def test_load_forest_rejects_garbage(tmp_path):
    path = tmp_path / "junk.txt"
    path.write_text("not a forest\n")
    with pytest.raises(ValueError):
        load_forest(path)


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------


def test_auc_hand_case():
    # positives at ranks 3,4 of 4 -> 3/4 of positive-negative pairs won...
    # scores: n=0.1, p=0.4, n=0.3, p=0.2 -> pairs won: (0.4>0.1, 0.4>0.3,
    # 0.2>0.1) = 3 of 4
    assert auc_score([0.1, 0.4, 0.3, 0.2],
                     [False, True, False, True]) == pytest.approx(0.75)


def test_auc_perfect_and_inverted():
    labels = [False, False, True, True]
    assert auc_score([0.1, 0.2, 0.8, 0.9], labels) == 1.0
    assert auc_score([0.9, 0.8, 0.2, 0.1], labels) == 0.0


def test_auc_ties_average():
    assert auc_score([0.5, 0.5, 0.5, 0.5],
                     [False, True, False, True]) == pytest.approx(0.5)


def test_auc_needs_both_classes():
    with pytest.raises(ValueError):
        auc_score([0.1, 0.2], [True, True])


@settings(max_examples=150, deadline=None)
@given(
    scores=st.lists(
        st.floats(min_value=-100, max_value=100, allow_nan=False),
        min_size=4,
        max_size=30,
    ),
    labels=st.data(),
)
def test_auc_invariant_under_monotone_transform(scores, labels):
    n = len(scores)
    lab = labels.draw(
        st.lists(st.booleans(), min_size=n, max_size=n).filter(
            lambda ls: any(ls) and not all(ls)
        )
    )
    base = auc_score(scores, lab)
    squashed = auc_score([np.tanh(s / 50.0) for s in scores], lab)
    assert base == pytest.approx(squashed, abs=1e-12)


# ---------------------------------------------------------------------------
# prediction metrics and attribute tallies
# ---------------------------------------------------------------------------


def test_eval_predictions_classification():
    out = eval_predictions([True, False, None, True],
                           [True, True, True, True], "classification")
    assert out == {"accuracy": 50.0}


def test_eval_predictions_regression():
    out = eval_predictions([1.0, None, 3.0], [2.0, 2.0, 3.0], "regression")
    assert out["coverage"] == pytest.approx(2 / 3)
    assert out["rmse"] == pytest.approx(np.sqrt(0.5))


def test_eval_predictions_zero_coverage():
    out = eval_predictions([None, None], [1.0, 2.0], "regression")
    assert out == {"rmse": None, "coverage": 0.0}


def test_eval_predictions_length_mismatch():
    with pytest.raises(LengthMismatch):
        eval_predictions([True], [True, False], "classification")


def test_top_attributes_counts_and_ties():
    corpus = [
        parse_response(render_response("t", claims, True))
        for claims in (
            [("LogP", "promotes"), ("TPSA", "inhibits")],
            [("LogP", None), ("Nonsense Attr Xyz", "promotes")],
            [("TPSA", "promotes"), ("MolWt", None)],
            [("LogP", "inhibits")],
        )
    ]
    top = top_attributes(corpus, k=3)
    assert [d.name for d in top] == ["MolLogP", "TPSA", "MolWt"]
