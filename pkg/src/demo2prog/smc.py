"""Sequential importance sampling over switching proportional controllers.

Each particle is a controller hypothesis ``(goal, gain)``.  At every step
most particles continue with Gaussian jitter on their goal and gain, and the
rest switch to a goal drawn from a prior over the upcoming part of the
demonstration.  Particles are weighted by how well their predicted control
explains the observed joint velocity and then systematically resampled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .arm import ArmModel, CameraModel, clamp_pixel, forward_kinematics_batch, project
from .errors import ContractViolationError, DegenerateWeightsError, InvalidArgumentError
from .programs import GAIN_RANGE, ControllerParams

NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class GenerativeModelConfig:
    p_switch: float = 0.1
    q_theta: float = 0.02
    q_kp: float = 0.01               # small: a larger gain walk lets goal/gain aliases track the data
    r: float = 0.05
    n_particles: int = 50
    window: int = 100
    gain_floor: float = 0.05
    allocation: str = "fixed"        # or "bernoulli": per-particle switch draws
    prior_draws: Optional[int] = None  # candidate draws per prior call; default n_particles

    def __post_init__(self):
        if not 0 < self.p_switch < 1:
            raise InvalidArgumentError(f"p_switch must lie in (0, 1), got {self.p_switch}")
        for name in ("q_theta", "q_kp", "r"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.n_particles < 2:
            raise InvalidArgumentError("need at least 2 particles")
        if self.window < 1:
            raise InvalidArgumentError("window must be >= 1")
        if self.allocation not in ("fixed", "bernoulli"):
            raise InvalidArgumentError(f"unknown allocation {self.allocation!r}")

    @property
    def n_continue(self) -> int:
        return int(math.ceil((1.0 - self.p_switch) * self.n_particles - 1e-9))

    @property
    def n_draws(self) -> int:
        return self.prior_draws or self.n_particles


@dataclass
class ParticleSet:
    goals: np.ndarray      # (N, J)
    gains: np.ndarray      # (N,)
    weights: np.ndarray    # (N,)
    normalized: bool = True

    def __len__(self):
        return len(self.gains)

    def __post_init__(self):
        if self.normalized and abs(self.weights.sum() - 1.0) > NORMALIZATION_TOL:
            raise ContractViolationError(f"weights sum to {self.weights.sum()!r}, not 1")


@dataclass
class PriorSample:
    goals: np.ndarray          # (count, J), jittered
    indices: np.ndarray        # demonstration step each goal was taken from
    fallback: bool = False     # saliency vanished over the window; drew uniformly


# ------------------------------------------------------------------ densities

def log_control_likelihood(u_obs, theta, goals, gains, r) -> np.ndarray:
    """Log density of ``u_obs`` under each hypothesis, vectorised over particles."""
    u_obs = np.asarray(u_obs, dtype=float)
    theta = np.asarray(theta, dtype=float)
    goals = np.atleast_2d(goals)
    gains = np.atleast_1d(gains)
    pred = gains[:, None] * (goals - theta)
    resid = (u_obs - pred) / r
    J = u_obs.shape[0]
    return -0.5 * np.sum(resid * resid, axis=1) - J * math.log(r * math.sqrt(2 * math.pi))


def control_likelihood(u_obs, theta, params: ControllerParams, r) -> float:
    u_obs = np.asarray(u_obs, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if u_obs.shape != theta.shape or params.goal.shape != theta.shape:
        raise InvalidArgumentError("control, joint and goal vectors must share one dimension")
    return float(np.exp(log_control_likelihood(u_obs, theta, params.goal, params.gain, r)[0]))


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > NORMALIZATION_TOL:
        raise ContractViolationError("effective sample size needs a normalised weight vector")
    # 1 / sum(w^2) evaluated on weights scaled by their maximum: exact for uniform and
    # one-hot vectors, where 1/N itself is not representable
    v = w / w.max()
    s1 = v.sum()
    n_eff = s1 * s1 / np.dot(v, v)
    return float(min(max(n_eff, 1.0), len(w)))


def systematic_resample(weights, rng) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    n = len(w)
    positions = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right").clip(max=n - 1)


# ------------------------------------------------------------------ priors

def future_window(n_steps: int, t: int, window: int) -> np.ndarray:
    return np.arange(t, min(t + window, n_steps - 1) + 1)


def attribution_prior_sample(demo, t, saliency, arm: ArmModel, camera: CameraModel, count,
                             rng, q_theta=0.02, window=100, n_draws=None) -> PriorSample:
    """Saliency-weighted goal proposals from the upcoming demonstration states.

    Candidate states are drawn uniformly from steps ``t .. t+window``, projected
    into the image through the arm's forward kinematics, weighted by the
    saliency at that pixel, resampled ``count`` times and jittered.
    """
    steps = future_window(len(demo.thetas), t, window)
    n_draws = n_draws or count
    cand = rng.choice(steps, size=n_draws)
    pix = clamp_pixel(camera, project(camera, forward_kinematics_batch(arm, demo.thetas[cand])))
    w = saliency.at_pixels(pix)
    total = w.sum()
    fallback = not (np.isfinite(total) and total > 0)
    if fallback:
        chosen = rng.choice(cand, size=count)
    else:
        chosen = cand[rng.choice(n_draws, size=count, p=w / total)]
    goals = demo.thetas[chosen] + rng.normal(0.0, q_theta, size=(count, demo.thetas.shape[1]))
    return PriorSample(goals, chosen, fallback)


def baseline_prior_sample(demo, t, count, rng, q_theta=0.02, window=100) -> PriorSample:
    steps = future_window(len(demo.thetas), t, window)
    chosen = rng.choice(steps, size=count)
    goals = demo.thetas[chosen] + rng.normal(0.0, q_theta, size=(count, demo.thetas.shape[1]))
    return PriorSample(goals, chosen, False)


class BaselinePrior:
    name = "baseline"

    def __init__(self, demo, config: GenerativeModelConfig):
        self.demo = demo
        self.config = config

    def __call__(self, t, count, rng) -> PriorSample:
        return baseline_prior_sample(self.demo, t, count, rng, self.config.q_theta, self.config.window)


class AttributionPrior:
    """Goal prior weighted by a saliency map; ``saliency`` is a map or ``t -> map``."""

    name = "attribution"

    def __init__(self, demo, config: GenerativeModelConfig, saliency, arm, camera):
        self.demo = demo
        self.config = config
        self.saliency = saliency
        self.arm = arm
        self.camera = camera
        self.fallbacks = 0

    def saliency_at(self, t):
        return self.saliency(t) if callable(self.saliency) else self.saliency

    def __call__(self, t, count, rng) -> PriorSample:
        s = attribution_prior_sample(self.demo, t, self.saliency_at(t), self.arm, self.camera,
                                     count, rng, self.config.q_theta, self.config.window,
                                     self.config.n_draws)
        self.fallbacks += s.fallback
        return s


# ------------------------------------------------------------------ inference

@dataclass
class StepResult:
    particles: ParticleSet     # resampled, uniform weights
    snapshot: ParticleSet      # weighted, before resampling
    neff: float
    map_params: ControllerParams


def switch_slots(config: GenerativeModelConfig, rng) -> np.ndarray:
    """Boolean mask of particles that switch controller this step."""
    n = config.n_particles
    mask = np.zeros(n, dtype=bool)
    if config.allocation == "bernoulli":
        return rng.random(n) < config.p_switch
    n_switch = n - config.n_continue
    if n_switch > 0:
        # strided over the resampled set so each parent lineage is hit in proportion
        mask[((np.arange(n_switch) + 0.5) * n / n_switch).astype(int)] = True
    return mask


def sis_step(prev: ParticleSet, t: int, theta_t, u_t, config: GenerativeModelConfig,
             prior_sampler: Callable, rng) -> StepResult:
    n = config.n_particles
    if len(prev) != n:
        raise InvalidArgumentError(f"expected {n} particles, got {len(prev)}")
    switching = switch_slots(config, rng)
    n_sw = int(switching.sum())
    goals = prev.goals + rng.normal(0.0, config.q_theta, size=prev.goals.shape)
    gains = np.maximum(prev.gains + rng.normal(0.0, config.q_kp, size=n), config.gain_floor)
    if n_sw:
        goals[switching] = prior_sampler(t, n_sw, rng).goals

    logw = np.log(np.maximum(prev.weights, 1e-300)) + log_control_likelihood(
        u_t, theta_t, goals, gains, config.r)
    if not np.any(np.isfinite(logw)) or np.any(np.isnan(logw)):
        raise DegenerateWeightsError(t)
    logw = logw - np.max(logw)
    w = np.exp(logw)
    w = w / w.sum()
    snapshot = ParticleSet(goals, gains, w)
    neff = effective_sample_size(w)
    best = int(np.argmax(w))
    map_params = ControllerParams(goals[best].copy(), gains[best])
    idx = systematic_resample(w, rng)
    particles = ParticleSet(goals[idx], gains[idx], np.full(n, 1.0 / n))
    return StepResult(particles, snapshot, neff, map_params)


def initial_particles(config: GenerativeModelConfig, prior_sampler, rng) -> ParticleSet:
    n = config.n_particles
    goals = prior_sampler(0, n, rng).goals
    gains = rng.uniform(*GAIN_RANGE, size=n)
    return ParticleSet(goals, gains, np.full(n, 1.0 / n))


@dataclass
class InferenceTrace:
    weights: np.ndarray        # (T, N)
    goals: np.ndarray          # (T, N, J)
    gains: np.ndarray          # (T, N)
    neff: np.ndarray           # (T,)
    map_goals: np.ndarray      # (T, J)
    map_gains: np.ndarray      # (T,)
    prior: str = ""
    n_particles: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.neff)

    def map_params(self, t) -> ControllerParams:
        return ControllerParams(self.map_goals[t].copy(), self.map_gains[t])


def run_inference(demo, config: GenerativeModelConfig, prior, rng) -> InferenceTrace:
    """Filter the whole demonstration; ``prior`` is an AttributionPrior or BaselinePrior."""
    T = len(demo.thetas)
    if T < 1:
        raise InvalidArgumentError("demonstration is empty")
    n, J = config.n_particles, demo.thetas.shape[1]
    out_w = np.empty((T, n))
    out_g = np.empty((T, n, J))
    out_k = np.empty((T, n))
    neff = np.empty(T)
    map_g = np.empty((T, J))
    map_k = np.empty(T)
    particles = initial_particles(config, prior, rng)
    for t in range(T):
        step = sis_step(particles, t, demo.thetas[t], demo.controls[t], config, prior, rng)
        particles = step.particles
        out_w[t] = step.snapshot.weights
        out_g[t] = step.snapshot.goals
        out_k[t] = step.snapshot.gains
        neff[t] = step.neff
        map_g[t] = step.map_params.goal
        map_k[t] = step.map_params.gain
    return InferenceTrace(out_w, out_g, out_k, neff, map_g, map_k,
                          prior=getattr(prior, "name", type(prior).__name__), n_particles=n)


# ------------------------------------------------------------------ statistics / export

def neff_statistics(neff) -> dict:
    neff = np.asarray(neff, dtype=float)
    q1, q3 = np.percentile(neff, [25, 75])
    return {"mean": float(neff.mean()), "max": float(neff.max()),
            "min": float(neff.min()), "iqr": float(q3 - q1)}


def write_trace_csv(trace: InferenceTrace, path) -> None:
    J = trace.map_goals.shape[1]
    with open(path, "w") as fh:
        fh.write("t,neff," + ",".join(f"map_goal_{j}" for j in range(J)) + ",map_gain\n")
        for t in range(len(trace)):
            goal = ",".join(repr(float(v)) for v in trace.map_goals[t])
            fh.write(f"{t},{float(trace.neff[t])!r},{goal},{float(trace.map_gains[t])!r}\n")


def read_trace_csv(path):
    """Returns ``(neff, map_goals, map_gains)`` arrays from an exported trace."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1], data[:, 2:-1], data[:, -1]


def write_statistics_csv(rows: dict, path) -> None:
    """``rows`` maps a row label (e.g. ``Attribution (N_p = 50)``) to a statistics dict."""
    with open(path, "w") as fh:
        fh.write("statistic,mean,max,min,iqr\n")
        for label, s in rows.items():
            fh.write(f"{label},{s['mean']:.4f},{s['max']:.4f},{s['min']:.4f},{s['iqr']:.4f}\n")
