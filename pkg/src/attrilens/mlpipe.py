"""Dataset ingestion, scaffold splitting, forests, and metrics.

The interpretability pipeline: load a SMILES/label CSV, split it by
Bemis-Murcko scaffold so no scaffold spans two splits, featurize molecules
with implemented descriptors, train a small from-scratch random forest
(bootstrap + Gini, axis-aligned thresholds), and score it with rank-based
AUC. Also houses the answer-accuracy/RMSE metrics used to evaluate scored
response corpora.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .descriptors import DescriptorId, compute, registry, resolve_attribute
from .molgraph import Molecule, SmilesError, parse_smiles, scaffold_key
from .response import CLASSIFICATION, REGRESSION, ParsedResponse

__all__ = [
    "MissingColumn",
    "EmptyDataset",
    "DegenerateLabels",
    "LengthMismatch",
    "CsvSchema",
    "DatasetRecord",
    "LoadResult",
    "load_csv",
    "scaffold_split",
    "featurize",
    "ForestConfig",
    "ForestModel",
    "train_forest",
    "predict_proba",
    "save_forest",
    "load_forest",
    "auc_score",
    "eval_auc",
    "eval_predictions",
    "top_attributes",
]


class MissingColumn(ValueError):
    """The CSV lacks a column the schema requires."""


class EmptyDataset(ValueError):
    """No usable records."""


class DegenerateLabels(ValueError):
    """An operation needing both classes saw only one."""


class LengthMismatch(ValueError):
    """Parallel sequences of unequal length."""


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Names the columns carrying structures and labels."""

    smiles_col: str = "smiles"
    label_col: str = "label"
    task: str = CLASSIFICATION
    dataset_name: str = ""

    def __post_init__(self) -> None:
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"unknown task {self.task!r}")


@dataclass(frozen=True)
class DatasetRecord:
    smiles: str
    label: bool | float
    task: str
    dataset_name: str
    molecule: Molecule = field(repr=False, compare=False)


@dataclass(frozen=True)
class LoadResult:
    """Parsed records plus the count of rows skipped as unparseable."""

    records: tuple[DatasetRecord, ...]
    skipped: int

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _parse_label(text: str, task: str, context: str) -> bool | float:
    stripped = text.strip().lower()
    if task == CLASSIFICATION:
        if stripped in ("true", "1"):
            return True
        if stripped in ("false", "0"):
            return False
        raise ValueError(f"{context}: bad classification label {text!r}")
    try:
        value = float(stripped)
    except ValueError:
        raise ValueError(f"{context}: bad regression label {text!r}") from None
    if not np.isfinite(value):
        raise ValueError(f"{context}: non-finite regression label {text!r}")
    return value


def load_csv(path, schema: CsvSchema = CsvSchema()) -> LoadResult:
    """Load records, skipping (and counting) unparseable SMILES.

    Bad labels are schema errors and raise immediately -- only chemistry
    failures are skippable. An entirely unusable file raises EmptyDataset.
    """
    records: list[DatasetRecord] = []
    skipped = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        for needed in (schema.smiles_col, schema.label_col):
            if needed not in cols:
                raise MissingColumn(
                    f"{path}: column {needed!r} not in {sorted(cols)}"
                )
        for lineno, row in enumerate(reader, start=2):
            smiles = row[schema.smiles_col].strip()
            try:
                mol = parse_smiles(smiles)
            except SmilesError:
                skipped += 1
                continue
            label = _parse_label(
                row[schema.label_col], schema.task, f"{path}:{lineno}"
            )
            records.append(
                DatasetRecord(
                    smiles, label, schema.task, schema.dataset_name, mol
                )
            )
    if not records:
        raise EmptyDataset(f"{path}: no parseable records")
    return LoadResult(tuple(records), skipped)


# ---------------------------------------------------------------------------
# Scaffold split
# ---------------------------------------------------------------------------


def scaffold_split(
    records,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int | None = None,
):
    """Deterministic greedy scaffold split into (train, valid, test).

    Records are grouped by scaffold key and groups are ordered largest
    first (ties by key). Groups fill train until it reaches
    ``floor(f_train * n)`` records, then valid until the running total
    reaches ``floor((f_train + f_valid) * n)``, then test -- so no
    scaffold ever spans two splits, each split may overshoot its target
    by at most one scaffold group, and an indivisible single-scaffold
    dataset lands entirely in train. ``seed`` is accepted for interface
    symmetry with the other pipeline stages but unused: the greedy
    assignment has no random choices.
    """
    del seed
    records = list(records)
    if not records:
        raise EmptyDataset("cannot split zero records")
    if len(fractions) != 3:
        raise ValueError(f"need exactly three fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be non-negative and sum to 1: "
                         f"{fractions}")
    groups: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        groups.setdefault(scaffold_key(rec.molecule), []).append(i)
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))

    n = len(records)
    train_cutoff = int(fractions[0] * n)
    valid_cutoff = int((fractions[0] + fractions[1]) * n)
    train_idx: list[int] = []
    valid_idx: list[int] = []
    test_idx: list[int] = []
    for _, members in ordered:
        if len(train_idx) < train_cutoff:
            train_idx.extend(members)
        elif len(train_idx) + len(valid_idx) < valid_cutoff:
            valid_idx.extend(members)
        else:
            test_idx.extend(members)
    return tuple(
        [records[i] for i in sorted(part)]
        for part in (train_idx, valid_idx, test_idx)
    )


# ---------------------------------------------------------------------------
# Featurization
# ---------------------------------------------------------------------------


def featurize(records, feature_ids) -> np.ndarray:
    """Descriptor matrix, one row per record.

    Multi-component inputs (salts) are featurized on their largest
    component, the usual convention for property models.
    """
    ids = [
        d if isinstance(d, DescriptorId) else resolve_attribute(str(d))
        for d in feature_ids
    ]
    X = np.empty((len(records), len(ids)), dtype=float)
    for i, rec in enumerate(records):
        mol = rec.molecule.largest_component()
        for j, d in enumerate(ids):
            X[i, j] = float(compute(mol, d))
    return X


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1:
            raise ValueError("n_trees and max_depth must be >= 1")


@dataclass
class Tree:
    """Array-encoded binary tree.

    ``feature[i] >= 0`` marks an internal node sending ``x[feature] <=
    threshold`` left; ``feature[i] == -1`` marks a leaf whose class-1
    probability is ``value[i]``.
    """

    feature: list[int]
    threshold: list[float]
    left: list[int]
    right: list[int]
    value: list[float]

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        for r, x in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                if x[self.feature[node]] <= self.threshold[node]:
                    node = self.left[node]
                else:
                    node = self.right[node]
            out[r] = self.value[node]
        return out


@dataclass
class ForestModel:
    trees: list[Tree]
    feature_ids: tuple[DescriptorId, ...]
    training_meta: dict

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.feature_ids)


def _best_split(X, y, feat_candidates):
    """Best (feature, threshold, gini) over candidate features.

    Scans midpoints between consecutive distinct sorted values using
    prefix sums of positive counts; returns None when nothing splits.
    """
    n = len(y)
    total_pos = y.sum()
    best = None
    best_gini = None
    for f in feat_candidates:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        pos_prefix = np.cumsum(ys)
        # candidate boundaries: between i and i+1 where value changes
        change = np.nonzero(xs[1:] != xs[:-1])[0]
        if change.size == 0:
            continue
        n_left = change + 1
        n_right = n - n_left
        pos_left = pos_prefix[change]
        pos_right = total_pos - pos_left
        p_l = pos_left / n_left
        p_r = pos_right / n_right
        gini = (
            n_left * (2 * p_l * (1 - p_l))
            + n_right * (2 * p_r * (1 - p_r))
        ) / n
        k = int(np.argmin(gini))
        if best_gini is None or gini[k] < best_gini - 1e-15:
            best_gini = float(gini[k])
            thr = (xs[change[k]] + xs[change[k] + 1]) / 2.0
            best = (int(f), float(thr))
    if best is None:
        return None
    return best[0], best[1], best_gini


def _grow_tree(X, y, max_depth, rng, n_candidates) -> Tree:
    tree = Tree([], [], [], [], [])

    def new_node():
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.value.append(0.0)
        return len(tree.feature) - 1

    def build(idx, depth):
        node = new_node()
        ys = y[idx]
        p = ys.mean()
        tree.value[node] = float(p)
        if depth >= max_depth or p == 0.0 or p == 1.0 or len(idx) < 2:
            return node
        feats = rng.choice(X.shape[1], size=n_candidates, replace=False)
        found = _best_split(X[idx], ys, feats)
        if found is None:
            return node
        f, thr, _ = found
        mask = X[idx, f] <= thr
        # float midpoints between near-equal values can collapse one side
        if mask.all() or not mask.any():
            return node
        left = build(idx[mask], depth + 1)
        right = build(idx[~mask], depth + 1)
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = left
        tree.right[node] = right
        return node

    build(np.arange(len(y)), 0)
    return tree


def train_forest(
    records, feature_ids, cfg: ForestConfig = ForestConfig()
) -> ForestModel:
    """Bootstrap random forest with Gini splits; deterministic per seed.

    Each tree draws its own RNG stream from the seed, samples the training
    set with replacement, and considers ``ceil(sqrt(d))`` random features
    per node.
    """
    records = list(records)
    y = np.array([1.0 if r.label else 0.0 for r in records])
    if len(set(y.tolist())) < 2:
        raise DegenerateLabels("training labels contain a single class")
    ids = tuple(
        d if isinstance(d, DescriptorId) else resolve_attribute(str(d))
        for d in feature_ids
    )
    X = featurize(records, ids)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite descriptor feature encountered")
    n_candidates = max(1, int(np.ceil(np.sqrt(X.shape[1]))))
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    trees = []
    n = len(records)
    for ss in streams:
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, n, size=n)
        trees.append(
            _grow_tree(X[boot], y[boot], cfg.max_depth, rng, n_candidates)
        )
    meta = {
        "seed": cfg.seed,
        "n_trees": cfg.n_trees,
        "max_depth": cfg.max_depth,
    }
    return ForestModel(trees, ids, meta)


def predict_proba(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Class-1 probability: mean of per-tree leaf estimates."""
    votes = np.zeros(len(X))
    for tree in model.trees:
        votes += tree.predict(X)
    return votes / len(model.trees)


# ---------------------------------------------------------------------------
# Persistence: versioned plain-text dump
# ---------------------------------------------------------------------------

_DUMP_HEADER = "forest-dump v1"


def save_forest(model: ForestModel, path) -> None:
    lines = [_DUMP_HEADER]
    m = model.training_meta
    lines.append(f"meta {m['seed']} {m['n_trees']} {m['max_depth']}")
    lines.append("features " + " ".join(model.feature_names))
    for t, tree in enumerate(model.trees):
        lines.append(f"tree {t} {len(tree.feature)}")
        for i in range(len(tree.feature)):
            if tree.feature[i] < 0:
                lines.append(f"leaf {tree.value[i]!r}")
            else:
                lines.append(
                    f"split {tree.feature[i]} {tree.threshold[i]!r} "
                    f"{tree.left[i]} {tree.right[i]}"
                )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_forest(path) -> ForestModel:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _DUMP_HEADER:
        raise ValueError(f"{path}: not a {_DUMP_HEADER!r} file")
    _, seed, n_trees, max_depth = lines[1].split()
    names = lines[2].split()[1:]
    ids = tuple(resolve_attribute(n) for n in names)
    trees: list[Tree] = []
    i = 3
    while i < len(lines):
        head = lines[i].split()
        if head[0] != "tree":
            raise ValueError(f"{path}: expected tree header at line {i + 1}")
        n_nodes = int(head[2])
        tree = Tree([], [], [], [], [])
        for j in range(n_nodes):
            parts = lines[i + 1 + j].split()
            if parts[0] == "leaf":
                tree.feature.append(-1)
                tree.threshold.append(0.0)
                tree.left.append(-1)
                tree.right.append(-1)
                tree.value.append(float(parts[1]))
            else:
                tree.feature.append(int(parts[1]))
                tree.threshold.append(float(parts[2]))
                tree.left.append(int(parts[3]))
                tree.right.append(int(parts[4]))
                tree.value.append(0.0)
        trees.append(tree)
        i += 1 + n_nodes
    meta = {
        "seed": int(seed),
        "n_trees": int(n_trees),
        "max_depth": int(max_depth),
    }
    return ForestModel(trees, ids, meta)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def auc_score(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC with tie averaging."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray([1 if v else 0 for v in labels])
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs both classes present")
    ranks = rankdata(s)  # average ranks on ties
    rank_sum = ranks[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def eval_auc(model: ForestModel, records) -> float:
    records = list(records)
    X = featurize(records, model.feature_ids)
    return auc_score(predict_proba(model, X), [r.label for r in records])


def eval_predictions(parsed_answers, labels, task: str) -> dict:
    """Answer-level metrics for a scored corpus.

    Classification returns ``{"accuracy": percent}`` with absent answers
    counted wrong (mirroring tags-only extraction: no tag, no credit).
    Regression returns RMSE over records whose answer parsed to a number,
    plus the coverage ratio; RMSE is None at zero coverage.
    """
    answers = list(parsed_answers)
    labels = list(labels)
    if len(answers) != len(labels):
        raise LengthMismatch(
            f"{len(answers)} answers vs {len(labels)} labels"
        )
    if not answers:
        raise EmptyDataset("no predictions to score")
    if task == CLASSIFICATION:
        hits = sum(
            1 for a, l in zip(answers, labels)
            if isinstance(a, bool) and a == bool(l)
        )
        return {"accuracy": 100.0 * hits / len(answers)}
    pairs = [
        (float(a), float(l))
        for a, l in zip(answers, labels)
        if isinstance(a, (int, float)) and not isinstance(a, bool)
    ]
    coverage = len(pairs) / len(answers)
    if not pairs:
        return {"rmse": None, "coverage": 0.0}
    diff = np.array([a - l for a, l in pairs])
    return {
        "rmse": float(np.sqrt(np.mean(diff**2))),
        "coverage": coverage,
    }


def top_attributes(corpus, k: int = 10) -> list[DescriptorId]:
    """Most-claimed implemented descriptors across parsed responses.

    Every claim (with or without polarity) is resolved against the
    registry; unresolvable or unimplemented mentions are ignored. Ties
    break alphabetically on the canonical name.
    """
    counts: Counter[str] = Counter()
    for parsed in corpus:
        if not isinstance(parsed, ParsedResponse) or not parsed.claims:
            continue
        for claim in parsed.claims:
            ident = resolve_attribute(claim.raw_name)
            if ident is not None and ident.implemented:
                counts[ident.name] += 1
    by_registry = {d.name: d for d in registry()}
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [by_registry[name] for name, _ in ranked[:k]]
