"""Diagnostics for guidance failure mechanisms.

Two mechanisms get quantified. Lagged suppression: the discrepancy
between positive and negative predictions on a shared latent is small
in the early (high-noise) steps, so an unnormalized correction barely
acts until late. Cumulative trajectory bias: evaluating the negative
prediction on the positively shaped latent drifts away from what the
negative condition would predict on its own latent, and the gap grows
as sampling proceeds. Jacobian spectral structure (dominant update
direction and the projection of the correction onto it) and final-mode
occupancy metrics round out the picture.
"""

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from guidelab.guidance import GuidanceConfig
from guidelab.oracle import Condition, GmmWorld, epsilon_oracle, log_density_and_score, noised_mixture
from guidelab.sampler import Trajectory, run_single_branch
from guidelab.schedule import NoiseSchedule

__all__ = [
    "DiagnosticsReport",
    "delta_norm_curve",
    "jacobian_fd",
    "leading_eigen",
    "suppression_projection",
    "mode_mass",
    "trajectory_bias_probe",
    "build_report",
    "report_to_json",
    "series_to_csv",
]

MAX_FD_DIM = 16


@dataclass(frozen=True)
class DiagnosticsReport:
    """Per-step diagnostic series plus final mode occupancy.

    delta_norms, suppression_proj, and bias_gap are lists of (t, value);
    leading_eigs is a list of (t, eigenvalue, unit eigenvector);
    mode_masses maps a label to the fraction of final samples assigned
    to that label's components.
    """

    delta_norms: list
    leading_eigs: list
    suppression_proj: list
    mode_masses: dict
    bias_gap: list = field(default_factory=list)

    def __post_init__(self):
        for t, lam, v in self.leading_eigs:
            norm = np.linalg.norm(v)
            if abs(norm - 1.0) > 1e-10:
                raise ValueError(f"eigenvector at t={t} has norm {norm}, expected 1 within 1e-10")
        for label, frac in self.mode_masses.items():
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"mode mass for {label!r} is {frac}, outside [0, 1]")


def delta_norm_curve(traj: Trajectory) -> list:
    """Per-step discrepancy norms (t, ||delta_t||), t descending from T.

    Reads the recorded deltas directly, so the curve agrees with the
    StepRecords bit for bit.
    """
    curve = []
    for rec in traj.records:
        if rec.delta is None:
            raise ValueError(f"trajectory strategy {traj.config.strategy} recorded no discrepancy at t={rec.t}")
        curve.append((rec.t, float(np.linalg.norm(rec.delta))))
    return curve


def jacobian_fd(world: GmmWorld, cond: Condition, schedule: NoiseSchedule, x: np.ndarray, t: int, h: float) -> np.ndarray:
    """Dense Jacobian of the noise prediction at (x, t) by central differences.

    J[i, j] = d eps_i / d x_j at step size h. Restricted to small
    dimensions; the column loop does 2*dim oracle calls.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step h must be > 0, got {h}")
    x = np.asarray(x, dtype=np.float64)
    dim = world.dim
    if dim > MAX_FD_DIM:
        raise ValueError(f"dense finite differences limited to dim <= {MAX_FD_DIM}, got {dim}")
    J = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = h
        hi = epsilon_oracle(world, cond, schedule, x + e, t)
        lo = epsilon_oracle(world, cond, schedule, x - e, t)
        J[:, j] = (hi - lo) / (2.0 * h)
    return J


def leading_eigen(J: np.ndarray, iters: int = 200, tol: float = 1e-10) -> tuple:
    """Largest-magnitude eigenpair of J by power iteration on J^T J.

    The eigenvalue sign comes from the Rayleigh quotient <v, J v>. If
    the residual ||J v - lam v|| still exceeds tol * |lam| after iters
    sweeps, a warning is emitted and the best pair so far is returned.
    The eigenvector is oriented so its largest-magnitude component is
    nonnegative.
    """
    J = np.asarray(J, dtype=np.float64)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError(f"leading_eigen needs a square matrix, got shape {J.shape}")
    n = J.shape[0]
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    JtJ = J.T @ J
    for _ in range(iters):
        w = JtJ @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # J annihilates v; the current unit vector is as good as any
            break
        w /= norm
        if np.linalg.norm(w - v) < 1e-15 or np.linalg.norm(w + v) < 1e-15:
            v = w
            break
        v = w
    lam = float(v @ (J @ v))
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    residual = float(np.linalg.norm(J @ v - lam * v))
    if residual > tol * max(abs(lam), 1e-300):
        warnings.warn(
            f"power iteration residual {residual:.3e} above tol*|lambda|={tol * abs(lam):.3e} after {iters} iterations",
            RuntimeWarning,
        )
    return lam, v


def suppression_projection(v_l: np.ndarray, delta: np.ndarray, w: float) -> float:
    """Projection of the scaled correction onto the dominant direction: -w * <v_l, delta>."""
    v_l = np.asarray(v_l, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    norm = np.linalg.norm(v_l)
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"v_l must be a unit vector within 1e-6, got norm {norm}")
    return float(-w * np.dot(v_l, delta))


def mode_mass(samples, world: GmmWorld, label_sets: dict) -> dict:
    """Fraction of samples per label, by hard argmax responsibility at t=0.

    label_sets maps a label to a collection of component indices and
    must partition all components of the world.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if X.size == 0:
        raise ValueError("mode_mass needs a nonempty sample set")
    claimed = []
    for label, idx in label_sets.items():
        claimed.extend(int(i) for i in idx)
    if sorted(claimed) != list(range(world.num_components)):
        raise ValueError(f"label_sets {label_sets} do not partition components 0..{world.num_components - 1}")
    diff = X[:, None, :] - world.means[None]
    log_comp = (
        -0.5 * np.sum(diff * diff / world.cov_diags[None], axis=2)
        - 0.5 * np.sum(np.log(world.cov_diags), axis=1)[None]
        + np.log(world.weights)[None]
    )
    assign = np.argmax(log_comp, axis=1)
    out = {}
    for label, idx in label_sets.items():
        members = np.asarray(sorted(int(i) for i in idx))
        out[label] = float(np.mean(np.isin(assign, members)))
    return out


def trajectory_bias_probe(
    world: GmmWorld,
    p_plus: Condition,
    p_minus: Condition,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    seeds,
) -> list:
    """Mean gap between the negative prediction on shared vs. decoupled latents.

    For each seed, a coupled trajectory runs under cfg (a shared-latent
    strategy with the negative condition) and a decoupled reference
    trajectory samples the negative condition raw from the same initial
    noise. At each step t the raw negative prediction is evaluated on
    both latents and the norm of the difference is averaged over seeds.
    The gap is 0 exactly at t=T (identical initialization), and an
    identically zero series when p_plus == p_minus. Runs in
    deterministic mode so the two runs share no noise bookkeeping.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("trajectory_bias_probe needs at least one seed")
    if cfg.strategy not in ("NP", "SDN"):
        raise ValueError(f"bias probe needs a shared-latent strategy with a negative condition, got {cfg.strategy}")
    ref_cfg = GuidanceConfig(strategy="CFG", w=1.0, lambda_=cfg.lambda_, eps_stab=cfg.eps_stab)
    T = schedule.num_steps
    gaps = np.zeros(T)
    for seed in seeds:
        coupled = run_single_branch(world, p_plus, p_minus, schedule, cfg, seed, deterministic=True)
        reference = run_single_branch(world, p_minus, None, schedule, ref_cfg, seed, deterministic=True)
        for i, t in enumerate(range(T, 0, -1)):
            en_shared = epsilon_oracle(world, p_minus, schedule, coupled.states[i], t)
            en_own = epsilon_oracle(world, p_minus, schedule, reference.states[i], t)
            gaps[i] += np.linalg.norm(en_shared - en_own)
    gaps /= len(seeds)
    return [(t, float(gaps[i])) for i, t in enumerate(range(T, 0, -1))]


def build_report(
    world: GmmWorld,
    p_plus: Condition,
    p_minus: Condition,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    seeds,
    label_sets: dict,
    fd_h: float = 1e-5,
    eigen_seed_index: int = 0,
) -> DiagnosticsReport:
    """Assemble the full diagnostic report for a shared-latent run.

    delta_norms and bias_gap are seed-averaged; the spectral series
    (leading eigenpair and suppression projection) follow one
    representative seed's latent path, since eigenvectors do not
    average across seeds.
    """
    seeds = list(seeds)
    trajs = [run_single_branch(world, p_plus, p_minus, schedule, cfg, s, deterministic=True) for s in seeds]
    T = schedule.num_steps
    curves = np.array([[val for _, val in delta_norm_curve(tr)] for tr in trajs])
    delta_norms = [(t, float(curves[:, i].mean())) for i, t in enumerate(range(T, 0, -1))]

    probe = trajectory_bias_probe(world, p_plus, p_minus, schedule, cfg, seeds)

    rep = trajs[eigen_seed_index]
    leading_eigs = []
    suppression = []
    for i, t in enumerate(range(T, 0, -1)):
        J = jacobian_fd(world, p_plus, schedule, rep.states[i], t, fd_h)
        lam, v = leading_eigen(J)
        leading_eigs.append((t, lam, v))
        suppression.append((t, suppression_projection(v, rep.records[i].delta, cfg.w)))

    finals = np.stack([tr.final for tr in trajs])
    masses = mode_mass(finals, world, label_sets)
    return DiagnosticsReport(
        delta_norms=delta_norms,
        leading_eigs=leading_eigs,
        suppression_proj=suppression,
        mode_masses=masses,
        bias_gap=probe,
    )


def report_to_json(report: DiagnosticsReport) -> dict:
    """Plain-JSON view of a report (arrays become lists)."""
    return {
        "delta_norms": [[t, val] for t, val in report.delta_norms],
        "leading_eigs": [[t, lam, list(map(float, v))] for t, lam, v in report.leading_eigs],
        "suppression_proj": [[t, val] for t, val in report.suppression_proj],
        "mode_masses": dict(report.mode_masses),
        "bias_gap": [[t, val] for t, val in report.bias_gap],
    }


def series_to_csv(path, series, value_header: str = "value") -> None:
    """Write a (t, value) series to CSV with header t,<value_header>."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", value_header])
        for t, val in series:
            writer.writerow([t, repr(float(val))])


def report_to_json_file(path, report: DiagnosticsReport) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_json(report), fh, indent=2)
        fh.write("\n")
