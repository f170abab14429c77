"""Reverse-process samplers: one shared latent, or two decoupled ones.

The single-branch runner drives CFG, negative prompting, and the
directionally normalized rule on one latent. The dual-branch runner
evolves a plus and a minus latent in parallel from the same initial
noise: each branch computes its own internally CFG-guided prediction on
its own latent, the plus update combines the two predictions, and the
minus branch advances on its own prediction alone so it stays a clean
sample of what the negative condition would generate.

Seeding contract: rng = numpy.random.default_rng(seed); the initial
latent x_T is the first draw. Deterministic mode draws nothing else;
stochastic mode draws one unit Gaussian per step, and a dual run feeds
that same draw to both branches (synchronized noise).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from guidelab.guidance import (
    GuidanceConfig,
    branch_guided_eps,
    cfg_combine,
    np_combine,
    sdn_combine,
    sdg_combine,
    tdd_only_combine,
)
from guidelab.oracle import Condition, GmmWorld, epsilon_oracle
from guidelab.schedule import NoiseSchedule

__all__ = [
    "SamplerStepCoeffs",
    "StepRecord",
    "Trajectory",
    "DualTrajectory",
    "ancestral_coeffs",
    "run_single_branch",
    "run_dual_branch",
]


@dataclass(frozen=True)
class SamplerStepCoeffs:
    """Coefficients of one reverse update x_{t-1} = a_t x_t + b_t eps_hat + sigma_t eta."""

    a_t: float
    b_t: float
    sigma_t: float


@dataclass(frozen=True)
class StepRecord:
    """Everything one reverse step saw: predictions, discrepancy, applied correction.

    eps_neg and delta are None for strategies without a negative
    prediction at that step; whenever both predictions are present,
    delta == eps_pos - eps_neg exactly.
    """

    t: int
    eps_pos: np.ndarray
    eps_neg: Optional[np.ndarray]
    delta: Optional[np.ndarray]
    correction: np.ndarray
    x_after: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """One latent's full reverse path, states ordered x_T down to x_0."""

    seed: int
    config: GuidanceConfig
    states: list
    records: list

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class DualTrajectory:
    plus: Trajectory
    minus: Trajectory
    shared_seed: int


def ancestral_coeffs(schedule: NoiseSchedule, t: int, deterministic: bool = True) -> SamplerStepCoeffs:
    """Standard ancestral update coefficients at step t.

    a_t = 1/sqrt(1-beta_t), b_t = -beta_t/(sqrt(1-beta_t)*sqrt(1-alpha_bar_t)),
    sigma_t = sqrt(beta_t), forced to zero in deterministic mode.
    """
    b = schedule.beta(t)
    ab = schedule.alpha_bar(t)
    a_t = 1.0 / np.sqrt(1.0 - b)
    b_t = -b / (np.sqrt(1.0 - b) * np.sqrt(1.0 - ab))
    sigma_t = 0.0 if deterministic else float(np.sqrt(b))
    return SamplerStepCoeffs(a_t=float(a_t), b_t=float(b_t), sigma_t=sigma_t)


def _single_step_eps(world, p_plus, p_neg, schedule, cfg, x, t):
    """Per-step prediction and bookkeeping for the single-latent strategies."""
    if cfg.strategy == "CFG":
        eps_u = epsilon_oracle(world, Condition.null(), schedule, x, t)
        eps_c = epsilon_oracle(world, p_plus, schedule, x, t)
        eps_hat = cfg_combine(eps_u, eps_c, cfg.w)
        return eps_hat, eps_c, None, None, eps_hat - eps_u
    eps_pos = epsilon_oracle(world, p_plus, schedule, x, t)
    eps_neg = epsilon_oracle(world, p_neg, schedule, x, t)
    delta = eps_pos - eps_neg
    if cfg.strategy == "NP":
        eps_hat = np_combine(eps_pos, eps_neg, cfg.w)
    else:
        eps_hat = sdn_combine(eps_pos, eps_neg, cfg.lambda_, cfg.eps_stab)
    return eps_hat, eps_pos, eps_neg, delta, eps_hat - eps_pos


def run_single_branch(
    world: GmmWorld,
    p_plus: Condition,
    p_neg: Optional[Condition],
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    seed: int,
    deterministic: bool = True,
) -> Trajectory:
    """Sample one latent from x_T to x_0 under a single-trajectory strategy."""
    if cfg.strategy not in ("CFG", "NP", "SDN"):
        raise ValueError(f"run_single_branch handles CFG/NP/SDN, got {cfg.strategy}")
    if cfg.strategy in ("NP", "SDN") and p_neg is None:
        raise ValueError(f"strategy {cfg.strategy} requires a negative condition")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(world.dim)
    states = [x.copy()]
    records = []
    for t in range(schedule.num_steps, 0, -1):
        coeffs = ancestral_coeffs(schedule, t, deterministic)
        eps_hat, eps_pos, eps_neg, delta, correction = _single_step_eps(
            world, p_plus, p_neg, schedule, cfg, x, t
        )
        x = coeffs.a_t * x + coeffs.b_t * eps_hat
        if not deterministic:
            x = x + coeffs.sigma_t * rng.standard_normal(world.dim)
        states.append(x.copy())
        records.append(StepRecord(t=t, eps_pos=eps_pos, eps_neg=eps_neg, delta=delta,
                                  correction=correction, x_after=x.copy()))
    return Trajectory(seed=seed, config=cfg, states=states, records=records)


def run_dual_branch(
    world: GmmWorld,
    p_plus: Condition,
    p_minus: Condition,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    seed: int,
    deterministic: bool = True,
) -> DualTrajectory:
    """Evolve decoupled plus/minus latents from shared initial noise.

    Both branch predictions are internally CFG-guided on their own
    latent with the same w. The plus branch advances on the combined
    prediction (normalized for SDG, unnormalized for the
    decoupling-only ablation); the minus branch advances on its own
    prediction and never reads the plus side.
    """
    if cfg.strategy not in ("TDD_ONLY", "SDG"):
        raise ValueError(f"run_dual_branch handles TDD_ONLY/SDG, got {cfg.strategy}")
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(world.dim)
    xp, xm = x0.copy(), x0.copy()
    states_p, states_m = [xp.copy()], [xm.copy()]
    records_p, records_m = [], []
    zero = np.zeros(world.dim)
    for t in range(schedule.num_steps, 0, -1):
        coeffs = ancestral_coeffs(schedule, t, deterministic)
        eps_plus = branch_guided_eps(world, p_plus, schedule, xp, t, cfg.w)
        eps_minus = branch_guided_eps(world, p_minus, schedule, xm, t, cfg.w)
        delta = eps_plus - eps_minus
        if cfg.strategy == "SDG":
            eps_hat = sdg_combine(eps_plus, eps_minus, cfg.lambda_, cfg.eps_stab)
        else:
            eps_hat = tdd_only_combine(eps_plus, eps_minus, cfg.w)
        eta = rng.standard_normal(world.dim) if not deterministic else None
        xp = coeffs.a_t * xp + coeffs.b_t * eps_hat
        xm = coeffs.a_t * xm + coeffs.b_t * eps_minus
        if eta is not None:
            xp = xp + coeffs.sigma_t * eta
            xm = xm + coeffs.sigma_t * eta
        states_p.append(xp.copy())
        states_m.append(xm.copy())
        records_p.append(StepRecord(t=t, eps_pos=eps_plus, eps_neg=eps_minus, delta=delta,
                                    correction=eps_hat - eps_plus, x_after=xp.copy()))
        records_m.append(StepRecord(t=t, eps_pos=eps_minus, eps_neg=None, delta=None,
                                    correction=zero.copy(), x_after=xm.copy()))
    plus = Trajectory(seed=seed, config=cfg, states=states_p, records=records_p)
    minus = Trajectory(seed=seed, config=cfg, states=states_m, records=records_m)
    return DualTrajectory(plus=plus, minus=minus, shared_seed=seed)
