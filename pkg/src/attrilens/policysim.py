"""Toy stochastic policy trained against the reward stack.

The policy is a factorized categorical distribution over a finite response
grammar, not a language model: a well-formedness bit, an attribute count,
an ordered draw of distinct attribute names, a promotes/inhibits bit per
drawn attribute, and a per-query true/false answer bit. Sampling renders a
full textual response (deliberately malformed when the format bit is 0) so
training exercises the production parser and rewards end to end. The point
is to reproduce which reward components are learned quickly and which ones
slowly -- not model quality.

Training is plain gradient ascent on the analytic policy gradient of the
group-relative clipped objective (:mod:`attrilens.grpo`), one update per
step, on-policy (the importance ratio is 1 at the point of each update,
so only the advantage weights and the KL pull toward the initial
parameters shape the gradient).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import grpo
from ._data import resolve_range_table
from .descriptors import implemented_names
from .molgraph import Molecule, SmilesError, parse_smiles
from .response import (
    CLASSIFICATION,
    AttributeClaim,
    PromptSpec,
    parse_response,
    render_response,
)
from .rewards import RangeTable, load_range_table, total_reward

__all__ = [
    "ConfigError",
    "PolicyParams",
    "TrainConfig",
    "SampledResponse",
    "SimQuery",
    "load_sim_dataset",
    "sample_response",
    "action_logp",
    "train",
    "TrainingCurves",
    "export_curves",
]

_TAG_NAMES = ("think", "name", "answer")
_THINK_TEXT = (
    "Computed the implemented attributes for the molecule and compared "
    "each value against the advantageous range for the target property."
)


class ConfigError(ValueError):
    """Invalid simulator configuration."""


# ---------------------------------------------------------------------------
# Policy parameters
# ---------------------------------------------------------------------------


@dataclass
class PolicyParams:
    """Logits of the factorized response policy.

    ``logit_format`` gates well-formedness (sigmoid at temperature);
    ``logits_count`` is a categorical over attribute counts ``0..len-1``;
    ``logits_attr`` scores the attribute vocabulary for sequential
    without-replacement draws; ``logits_polarity`` holds one
    promotes-vs-inhibits logit per attribute; ``logits_answer`` holds one
    true-vs-false logit per training query (answers are query-conditional,
    everything else is shared).
    """

    logit_format: float
    logits_count: np.ndarray
    logits_attr: np.ndarray
    logits_polarity: np.ndarray
    logits_answer: np.ndarray

    @classmethod
    def zeros(
        cls,
        n_attrs: int | None = None,
        n_queries: int = 1,
        max_count: int = 12,
    ) -> "PolicyParams":
        if n_attrs is None:
            n_attrs = len(implemented_names())
        if max_count > n_attrs:
            raise ConfigError(
                f"max_count {max_count} exceeds attribute vocabulary "
                f"size {n_attrs}"
            )
        return cls(
            logit_format=0.0,
            logits_count=np.zeros(max_count + 1),
            logits_attr=np.zeros(n_attrs),
            logits_polarity=np.zeros(n_attrs),
            logits_answer=np.zeros(n_queries),
        )

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            self.logit_format,
            self.logits_count.copy(),
            self.logits_attr.copy(),
            self.logits_polarity.copy(),
            self.logits_answer.copy(),
        )

    def add_scaled(self, other: "PolicyParams", scale: float) -> None:
        """In-place ``self += scale * other`` (used by the ascent step)."""
        self.logit_format += scale * other.logit_format
        self.logits_count += scale * other.logits_count
        self.logits_attr += scale * other.logits_attr
        self.logits_polarity += scale * other.logits_polarity
        self.logits_answer += scale * other.logits_answer

    @property
    def n_attrs(self) -> int:
        return self.logits_attr.size

    @property
    def max_count(self) -> int:
        return self.logits_count.size - 1


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    """One fully specified draw from the policy."""

    format_ok: bool
    omit: str | None      # tag pair dropped when malformed
    count: int
    attrs: tuple[int, ...]        # indices into the attribute vocabulary
    polarities: tuple[int, ...]   # 1 promotes / 0 inhibits, per attr
    answer: bool


@dataclass(frozen=True)
class SampledResponse:
    text: str
    logp: float
    action: Action


def _sigmoid(x: float) -> float:
    # evaluated on logit/temperature; clamp-free because logits stay small
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def action_logp(
    policy: PolicyParams,
    action: Action,
    query_index: int,
    temperature: float,
    want_grad: bool = False,
) -> tuple[float, PolicyParams | None]:
    """Exact factorized log-probability of ``action`` (and its score).

    The score -- the gradient of ``logp`` with respect to every logit --
    uses the standard categorical/Bernoulli forms at temperature ``T``:
    ``(b - p)/T`` for a Bernoulli bit and ``(onehot - p)/T`` for each
    categorical draw, with already-drawn attributes masked out of later
    draws. The uniform choice of which tag pair to omit contributes
    ``log(1/3)`` to ``logp`` and nothing to the gradient.
    """
    T = temperature
    grad = (
        PolicyParams(
            0.0,
            np.zeros_like(policy.logits_count),
            np.zeros_like(policy.logits_attr),
            np.zeros_like(policy.logits_polarity),
            np.zeros_like(policy.logits_answer),
        )
        if want_grad
        else None
    )
    logp = 0.0

    # format bit
    p_ok = _sigmoid(policy.logit_format / T)
    b = 1.0 if action.format_ok else 0.0
    logp += np.log(p_ok if action.format_ok else 1.0 - p_ok)
    if grad is not None:
        grad.logit_format = (b - p_ok) / T
    if not action.format_ok:
        logp += np.log(1.0 / len(_TAG_NAMES))

    # attribute count
    p_count = _softmax(policy.logits_count / T)
    logp += np.log(p_count[action.count])
    if grad is not None:
        grad.logits_count = -p_count / T
        grad.logits_count[action.count] += 1.0 / T

    # ordered without-replacement attribute draws
    mask = np.zeros(policy.n_attrs, dtype=bool)
    for idx in action.attrs:
        scaled = policy.logits_attr / T
        scaled = np.where(mask, -np.inf, scaled)
        p_attr = _softmax(scaled)
        logp += np.log(p_attr[idx])
        if grad is not None:
            live = ~mask
            grad.logits_attr[live] -= p_attr[live] / T
            grad.logits_attr[idx] += 1.0 / T
        mask[idx] = True

    # per-attribute polarity bits
    for idx, bit in zip(action.attrs, action.polarities):
        p_pro = _sigmoid(policy.logits_polarity[idx] / T)
        logp += np.log(p_pro if bit else 1.0 - p_pro)
        if grad is not None:
            grad.logits_polarity[idx] += (bit - p_pro) / T

    # per-query answer bit
    p_true = _sigmoid(policy.logits_answer[query_index] / T)
    logp += np.log(p_true if action.answer else 1.0 - p_true)
    if grad is not None:
        grad.logits_answer[query_index] = (
            (1.0 if action.answer else 0.0) - p_true
        ) / T

    return float(logp), grad


def _render_action(action: Action, vocab: tuple[str, ...]) -> str:
    claims = [
        AttributeClaim(vocab[i], "promotes" if bit else "inhibits")
        for i, bit in zip(action.attrs, action.polarities)
    ]
    return render_response(
        _THINK_TEXT, claims, action.answer, omit=action.omit
    )


def sample_response(
    policy: PolicyParams,
    prompt: PromptSpec,
    rng: np.random.Generator,
    query_index: int = 0,
    temperature: float = 0.6,
) -> SampledResponse:
    """Draw one response; ``logp`` is exact under the factorization.

    The full action (count, attributes, polarities, answer) is always
    sampled and paid for in ``logp``; when the format bit comes up 0 one
    tag pair is omitted from the rendered text, so some sampled content
    may be invisible to the parser but the distribution stays simple.
    """
    if prompt.task != CLASSIFICATION:
        raise ConfigError("the simulator supports classification prompts only")
    T = temperature
    fmt = rng.random() < _sigmoid(policy.logit_format / T)
    omit = None if fmt else _TAG_NAMES[rng.integers(len(_TAG_NAMES))]
    count = int(rng.choice(policy.max_count + 1,
                           p=_softmax(policy.logits_count / T)))
    attrs: list[int] = []
    mask = np.zeros(policy.n_attrs, dtype=bool)
    for _ in range(count):
        scaled = np.where(mask, -np.inf, policy.logits_attr / T)
        idx = int(rng.choice(policy.n_attrs, p=_softmax(scaled)))
        attrs.append(idx)
        mask[idx] = True
    polarities = tuple(
        int(rng.random() < _sigmoid(policy.logits_polarity[i] / T))
        for i in attrs
    )
    answer = bool(
        rng.random() < _sigmoid(policy.logits_answer[query_index] / T)
    )
    action = Action(fmt, omit, count, tuple(attrs), polarities, answer)
    logp, _ = action_logp(policy, action, query_index, T)
    vocab = tuple(implemented_names())[: policy.n_attrs]
    return SampledResponse(_render_action(action, vocab), logp, action)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimQuery:
    prompt: PromptSpec
    label: bool
    molecule: Molecule


def load_sim_dataset(path) -> list[SimQuery]:
    """Load a training CSV with columns smiles,target,task,label.

    Every row must parse: the simulator scores responses against real
    molecules, so an unparseable SMILES is a configuration error rather
    than a skippable record.
    """
    queries: list[SimQuery] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"smiles", "target", "task", "label"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ConfigError(
                f"{path}: expected columns {sorted(required)}, "
                f"got {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            if row["task"] != CLASSIFICATION:
                raise ConfigError(
                    f"{path}:{lineno}: simulator datasets must be "
                    f"classification, got {row['task']!r}"
                )
            try:
                mol = parse_smiles(row["smiles"])
            except SmilesError as exc:
                raise ConfigError(
                    f"{path}:{lineno}: unparseable SMILES "
                    f"{row['smiles']!r}: {exc}"
                ) from exc
            label_text = row["label"].strip().lower()
            if label_text not in ("true", "false", "0", "1"):
                raise ConfigError(
                    f"{path}:{lineno}: bad label {row['label']!r}"
                )
            queries.append(
                SimQuery(
                    PromptSpec(row["task"], row["smiles"], row["target"]),
                    label_text in ("true", "1"),
                    mol,
                )
            )
    if not queries:
        raise ConfigError(f"{path}: empty dataset")
    return queries


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    group_size: int = 8
    temperature: float = 0.6
    learning_rate: float = 0.1
    seed: int = 0
    algorithm: str = "grpo"
    count_bounds: tuple[int, int] = (3, 10)
    range_table: str = "gpt4o-default"
    dataset: str | None = None

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        lo, hi = self.count_bounds
        if not (0 <= lo <= hi):
            raise ConfigError(f"invalid count_bounds {self.count_bounds}")
        if self.algorithm not in ("grpo", "dapo"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")

    def optim(self) -> grpo.OptimConfig:
        return grpo.OptimConfig(
            group_size=self.group_size, algorithm=self.algorithm
        )


@dataclass
class TrainingCurves:
    """Per-step means of each reward component and the group objective."""

    steps: list[int] = field(default_factory=list)
    format: list[float] = field(default_factory=list)
    correct: list[float] = field(default_factory=list)
    count: list[float] = field(default_factory=list)
    rational: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)

    def append(self, step, fmt, correct, count, rational, total, objective):
        self.steps.append(step)
        self.format.append(fmt)
        self.correct.append(correct)
        self.count.append(count)
        self.rational.append(rational)
        self.total.append(total)
        self.objective.append(objective)


def train(
    config: TrainConfig,
    dataset: list[SimQuery] | None = None,
    table: RangeTable | None = None,
    policy: PolicyParams | None = None,
) -> tuple[TrainingCurves, PolicyParams]:
    """Run the simulator training loop; deterministic for a fixed seed.

    Per step and query, ``G`` responses are sampled from an RNG stream
    seeded by ``(seed, step, query)`` (so any parallel execution order
    would give identical draws), scored through the real parser and reward
    stack, normalized into group advantages, and folded into one plain
    gradient-ascent update averaged over surviving groups. The reference
    policy for the KL pull is the initial parameter snapshot. Under
    ``dapo`` zero-variance groups are dropped from the update (their
    samples still count toward the reported curves, which describe what
    the policy actually emits).
    """
    if dataset is None:
        if config.dataset is None:
            raise ConfigError("no dataset given")
        dataset = load_sim_dataset(config.dataset)
    if table is None:
        table = load_range_table(resolve_range_table(config.range_table))
    cfg = config.optim()
    T = config.temperature
    if policy is None:
        policy = PolicyParams.zeros(n_queries=len(dataset))
    if policy.logits_answer.size != len(dataset):
        raise ConfigError(
            "policy answer head size does not match dataset length"
        )
    reference = policy.copy()
    vocab = tuple(implemented_names())[: policy.n_attrs]
    curves = TrainingCurves()

    for step in range(1, config.steps + 1):
        sums = np.zeros(6)  # format, correct, count, rational, total, obj
        n_samples = 0
        n_groups_kept = 0
        grad_acc = PolicyParams(
            0.0,
            np.zeros_like(policy.logits_count),
            np.zeros_like(policy.logits_attr),
            np.zeros_like(policy.logits_polarity),
            np.zeros_like(policy.logits_answer),
        )
        for qid, query in enumerate(dataset):
            rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, step, qid])
            )
            samples = [
                sample_response(policy, query.prompt, rng, qid, T)
                for _ in range(config.group_size)
            ]
            records = []
            grads = []
            breakdowns = []
            for s in samples:
                parsed = parse_response(s.text, task=query.prompt.task)
                bd = total_reward(
                    parsed,
                    query.molecule,
                    query.label,
                    query.prompt.target,
                    table,
                    count_bounds=config.count_bounds,
                    task=query.prompt.task,
                )
                breakdowns.append(bd)
                logp_ref, _ = action_logp(reference, s.action, qid, T)
                records.append(
                    grpo.ResponseRecord(s.text, bd.total, s.logp, logp_ref)
                )
                _, g = action_logp(policy, s.action, qid, T, want_grad=True)
                grads.append(g)
            for bd in breakdowns:
                sums[:5] += (bd.format, bd.correct, bd.count,
                             bd.rational, bd.total)
            n_samples += len(breakdowns)

            group = grpo.TrajectoryGroup(f"q{qid}", records)
            adv = grpo.fill_advantages(group, cfg)
            if config.algorithm == "dapo" and not grpo.dapo_filter(
                [group], cfg.degenerate_eps
            ):
                continue
            logp_new = group.logp_old()  # on-policy single update
            sums[5] += grpo.grpo_objective(group, logp_new, cfg)
            per_sample = grpo.grpo_gradient(group, logp_new, cfg)
            for coeff, g in zip(per_sample, grads):
                grad_acc.add_scaled(g, float(coeff))
            n_groups_kept += 1

        if n_groups_kept:
            policy.add_scaled(grad_acc, config.learning_rate / n_groups_kept)
        curves.append(
            step,
            *(sums[:5] / n_samples),
            sums[5] / n_groups_kept if n_groups_kept else 0.0,
        )
    return curves, policy


def export_curves(curves: TrainingCurves, path) -> None:
    """Write the curves as CSV: step,format,correct,count,rational,total,objective."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step", "format", "correct", "count", "rational",
                 "total", "objective"]
            )
            for i, step in enumerate(curves.steps):
                writer.writerow(
                    [int(step)]
                    + [
                        repr(float(series[i]))
                        for series in (
                            curves.format,
                            curves.correct,
                            curves.count,
                            curves.rational,
                            curves.total,
                            curves.objective,
                        )
                    ]
                )
    except OSError as exc:
        raise OSError(f"cannot write curves to {path}: {exc}") from exc
