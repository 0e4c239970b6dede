"""Group-relative policy optimization math.

Implements the scoring-side math used by the toy-policy trainer: group
advantages normalized by the population standard deviation, a clipped
surrogate objective with a non-negative KL-to-reference penalty, and the
decoupled-clipping variant ("dapo") that widens the upper clip bound,
drops the KL term, and discards zero-variance groups instead of zeroing
their advantages.

Everything here is pure and operates on sequence-level log-probabilities:
one scalar per sampled response, matching the factorized toy policy in
:mod:`attrilens.policysim`. Token-level ratios are deliberately out of
scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GroupTooSmall",
    "OptimConfig",
    "ResponseRecord",
    "TrajectoryGroup",
    "compute_advantages",
    "fill_advantages",
    "kl_estimate",
    "grpo_objective",
    "grpo_gradient",
    "dapo_filter",
]

# exp(-50)..exp(50) spans ~1e-22..1e21: comfortably inside float64 while
# keeping u - log(u) - 1 well conditioned. Larger gaps indicate a broken
# caller, not a quantity worth estimating.
MAX_LOGP_GAP = 50.0


class GroupTooSmall(ValueError):
    """A trajectory group has fewer than two responses."""


@dataclass(frozen=True)
class OptimConfig:
    """Hyper-parameters for the group-relative update.

    ``clip_eps`` is the symmetric clip half-width used by ``algorithm="grpo"``;
    ``clip_eps_low``/``clip_eps_high`` form the decoupled band used by
    ``algorithm="dapo"`` (which also forces the KL coefficient to zero --
    ``kl_beta`` is ignored there). ``use_sample_std`` switches advantage
    normalization to the Bessel-corrected standard deviation for ablation;
    the default population std makes two-element groups normalize exactly
    to [-1, 1]. The ``clip_eps*=0.2/0.28``, ``kl_beta=0.04`` defaults are
    conventional for this family of methods, not tuned values.
    """

    group_size: int = 8
    clip_eps: float = 0.2
    clip_eps_low: float = 0.2
    clip_eps_high: float = 0.28
    kl_beta: float = 0.04
    algorithm: str = "grpo"
    degenerate_eps: float = 1e-8
    use_sample_std: bool = False

    def __post_init__(self) -> None:
        if self.algorithm not in ("grpo", "dapo"):
            raise ValueError(f"unknown algorithm: {self.algorithm!r}")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        for name in ("clip_eps", "clip_eps_low", "clip_eps_high"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.kl_beta < 0.0:
            raise ValueError("kl_beta must be >= 0")
        if self.degenerate_eps <= 0.0:
            raise ValueError("degenerate_eps must be > 0")

    @property
    def clip_band(self) -> tuple[float, float]:
        """The (low, high) multiplier band the ratio is clipped into."""
        if self.algorithm == "dapo":
            return 1.0 - self.clip_eps_low, 1.0 + self.clip_eps_high
        return 1.0 - self.clip_eps, 1.0 + self.clip_eps

    @property
    def effective_kl_beta(self) -> float:
        """KL coefficient actually applied (zero under ``dapo``)."""
        return 0.0 if self.algorithm == "dapo" else self.kl_beta


@dataclass
class ResponseRecord:
    """One sampled response with its reward and log-probabilities."""

    text: str
    reward_total: float
    logp_old: float
    logp_ref: float


@dataclass
class TrajectoryGroup:
    """G responses sampled for a single query."""

    query_id: str
    responses: list[ResponseRecord]
    advantages: list[float] | None = field(default=None)

    def rewards(self) -> np.ndarray:
        return np.array([r.reward_total for r in self.responses], dtype=float)

    def logp_old(self) -> np.ndarray:
        return np.array([r.logp_old for r in self.responses], dtype=float)

    def logp_ref(self) -> np.ndarray:
        return np.array([r.logp_ref for r in self.responses], dtype=float)


def compute_advantages(
    rewards,
    degenerate_eps: float = 1e-8,
    use_sample_std: bool = False,
) -> np.ndarray:
    """Normalize group rewards to zero-mean, unit-std advantages.

    Uses the population standard deviation (``ddof=0``) unless
    ``use_sample_std`` asks for the Bessel-corrected one. A group whose
    std falls below ``degenerate_eps`` carries no ranking signal; its
    advantages are all zero rather than a division blow-up.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise GroupTooSmall(
            f"advantage normalization needs >= 2 rewards, got shape {r.shape}"
        )
    std = r.std(ddof=1 if use_sample_std else 0)
    if std < degenerate_eps:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def fill_advantages(group: TrajectoryGroup, cfg: OptimConfig) -> np.ndarray:
    """Compute and store advantages on ``group``; returns them."""
    adv = compute_advantages(
        group.rewards(), cfg.degenerate_eps, cfg.use_sample_std
    )
    group.advantages = [float(a) for a in adv]
    return adv


def kl_estimate(logp_theta, logp_ref):
    """Non-negative per-sample KL estimator ``u - log(u) - 1``.

    ``u = exp(logp_ref - logp_theta)`` is the inverse likelihood ratio;
    the estimator is zero exactly when the two log-probs agree and grows
    in both directions. Accepts scalars or arrays elementwise. Gaps over
    ``MAX_LOGP_GAP`` nats are rejected: they would overflow/denormalize
    instead of estimating anything useful.
    """
    lt = np.asarray(logp_theta, dtype=float)
    lr = np.asarray(logp_ref, dtype=float)
    delta = lr - lt
    if not np.all(np.isfinite(delta)):
        raise ValueError("log-probabilities must be finite")
    if np.any(np.abs(delta) > MAX_LOGP_GAP):
        raise ValueError(
            f"|logp_ref - logp_theta| exceeds {MAX_LOGP_GAP}; "
            "the k3 estimator is not representable that far out"
        )
    u = np.exp(delta)
    out = u - delta - 1.0  # log(u) == delta
    if out.ndim == 0:
        return float(out)
    return out


def _surrogate_terms(
    group: TrajectoryGroup, logp_new, cfg: OptimConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Shared plumbing: (advantages, rho, surrogate, u)."""
    if group.advantages is None:
        raise ValueError(
            "group.advantages not computed; call fill_advantages first"
        )
    adv = np.asarray(group.advantages, dtype=float)
    new = np.asarray(logp_new, dtype=float)
    old = group.logp_old()
    ref = group.logp_ref()
    if not (adv.shape == new.shape == old.shape == ref.shape):
        raise ValueError("group arrays and logp_new must share length")
    rho = np.exp(new - old)
    lo, hi = cfg.clip_band
    surr = np.minimum(rho * adv, np.clip(rho, lo, hi) * adv)
    u = np.exp(ref - new)
    return adv, rho, surr, u


def grpo_objective(group: TrajectoryGroup, logp_new, cfg: OptimConfig) -> float:
    """Mean clipped surrogate minus the KL penalty for one group.

    ``(1/G) sum_i [ min(rho_i*A_i, clip(rho_i)*A_i) - beta*k3_i ]`` with
    ``rho_i = exp(logp_new_i - logp_old_i)``. Under ``dapo`` the clip band
    is asymmetric and beta is zero.
    """
    adv, _rho, surr, _u = _surrogate_terms(group, logp_new, cfg)
    beta = cfg.effective_kl_beta
    total = surr.sum()
    if beta != 0.0:
        kl = kl_estimate(np.asarray(logp_new, dtype=float), group.logp_ref())
        total -= beta * np.sum(kl)
    return float(total / adv.size)


def grpo_gradient(
    group: TrajectoryGroup, logp_new, cfg: OptimConfig
) -> np.ndarray:
    """Analytic gradient of :func:`grpo_objective` w.r.t. ``logp_new``.

    Per element: ``(1/G) * [A_i * rho_i * active_i - beta * (1 - u_i)]``
    where ``active_i`` is 1 exactly when the unclipped branch of the min
    is live (positive advantage and ratio at or below the upper clip, or
    negative advantage and ratio at or above the lower clip), and
    ``u_i = exp(logp_ref_i - logp_new_i)`` from the KL term. At a clip
    boundary the unclipped subgradient is chosen.
    """
    adv, rho, _surr, u = _surrogate_terms(group, logp_new, cfg)
    lo, hi = cfg.clip_band
    active = np.where(adv >= 0.0, rho <= hi, rho >= lo)
    grad = adv * rho * active
    beta = cfg.effective_kl_beta
    if beta != 0.0:
        # d/dlogp_new of (u - log u - 1) is (1 - u); the objective
        # subtracts beta times it.
        grad = grad - beta * (1.0 - u)
    return grad / adv.size


def dapo_filter(
    groups: list[TrajectoryGroup], degenerate_eps: float = 1e-8
) -> list[TrajectoryGroup]:
    """Drop groups whose rewards carry no ranking signal.

    Dynamic sampling keeps only groups with reward std at or above
    ``degenerate_eps``; all-identical groups (every response right, or
    every response wrong) are returned to the sampler instead of pushing
    zero advantages through the update.
    """
    kept = []
    for g in groups:
        r = g.rewards()
        if r.size >= 2 and r.std(ddof=0) >= degenerate_eps:
            kept.append(g)
    return kept
