"""
Adversaries for the limited-advice bandit game.

Each environment produces one EnvironmentStep per round: all N advice rows and
the full loss vector. The harness keeps the full step for regret accounting;
the algorithm only ever sees it through an AdviceOracle, which hands out at
most M advice rows and a single arm loss.
"""

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from modules.core import RngStream, validate_loss_vector
from modules.models import Diagnostics, LowerBoundConfig, ProblemDims
from modules.utils import (AdviceBudgetError, ConfigurationError, InvalidVectorError,
                           ParameterError, format_number, logger)

MAX_LOAD_CHUNK = 10000
MAX_LOAD_CELLS = 2**22
EPSILON_CAP = 0.25


@dataclass(frozen=True)
class EnvironmentStep:
    advice: np.ndarray  # N x K, one probability vector per expert
    losses: np.ndarray  # K

    def expert_losses(self):
        """ξ_t^h · ℓ_t for every expert h."""
        return self.advice @ self.losses


class AdviceOracle:
    """
    The algorithm's only window on a round.

    `query` may be called once, for at most `budget` experts; `observe_loss`
    once, for the played arm.
    """

    def __init__(self, step: EnvironmentStep, budget):
        self._step = step
        self._budget = budget
        self.queried = None
        self.observed_arm = None

    def query(self, experts):
        experts = np.asarray(experts, dtype=int)
        if self.queried is not None:
            raise AdviceBudgetError("advice was already queried this round")
        if len(experts) > self._budget:
            raise AdviceBudgetError(f"queried {len(experts)} experts, budget is {self._budget}")
        self.queried = experts
        return self._step.advice[experts].copy()

    def observe_loss(self, arm):
        if self.observed_arm is not None:
            raise AdviceBudgetError("a loss was already observed this round")
        self.observed_arm = int(arm)
        return float(self._step.losses[arm])


def _uniform_basis_advice(N, K, rng: RngStream):
    arms = rng.generator.integers(K, size=N)
    return np.eye(K)[arms], arms


def lower_bound_step(cfg: LowerBoundConfig, rng: RngStream) -> EnvironmentStep:
    """
    Uniformly random advice for every expert; the arm recommended by h* has
    loss Bernoulli(1/2 − ε), every other arm Bernoulli(1/2).
    """
    K = cfg.dims.K
    advice, arms = _uniform_basis_advice(cfg.dims.N, K, rng)
    thresholds = np.full(K, 0.5)
    thresholds[arms[cfg.hstar]] = 0.5 - cfg.epsilon
    losses = (rng.generator.random(K) < thresholds).astype(float)
    return EnvironmentStep(advice=advice, losses=losses)


def null_step(dims: ProblemDims, epsilon, rng: RngStream) -> EnvironmentStep:
    """Uniformly random advice; every arm's loss i.i.d. Bernoulli(1/2 − ε/K)."""
    if not 0.0 <= epsilon < 0.5:
        raise ParameterError(f"epsilon must lie in [0, 1/2), got {epsilon}")
    advice, _ = _uniform_basis_advice(dims.N, dims.K, rng)
    p = 0.5 - epsilon / dims.K
    losses = (rng.generator.random(dims.K) < p).astype(float)
    return EnvironmentStep(advice=advice, losses=losses)


class Environment(ABC):
    def __init__(self, dims: ProblemDims):
        self.dims = dims

    @property
    def hidden_best(self):
        """Index of the a-priori best expert, if the environment plants one."""
        return None

    @abstractmethod
    def step(self, t) -> EnvironmentStep:
        """Advice and losses for round t (1-based)."""


class LowerBoundEnvironment(Environment):
    def __init__(self, cfg: LowerBoundConfig, rng: RngStream):
        super().__init__(cfg.dims)
        self.cfg = cfg
        self.rng = rng

    @classmethod
    def with_random_hstar(cls, dims: ProblemDims, epsilon, rng: RngStream):
        """h* drawn uniformly before round 1, from the environment's own stream."""
        hstar = int(rng.generator.integers(dims.N))
        return cls(LowerBoundConfig(hstar=hstar, epsilon=epsilon, dims=dims), rng)

    @property
    def hidden_best(self):
        return self.cfg.hstar

    def step(self, t):
        return lower_bound_step(self.cfg, self.rng)


class NullEnvironment(Environment):
    def __init__(self, dims: ProblemDims, epsilon, rng: RngStream):
        super().__init__(dims)
        self.epsilon = epsilon
        self.rng = rng

    def step(self, t):
        return null_step(self.dims, self.epsilon, self.rng)


class DirichletEnvironment(Environment):
    """General (non-basis) advice from a symmetric Dirichlet, losses uniform on [0, 1]."""

    def __init__(self, dims: ProblemDims, rng: RngStream, concentration=1.0):
        super().__init__(dims)
        self.rng = rng
        self.concentration = concentration

    def step(self, t):
        alpha = np.full(self.dims.K, self.concentration)
        advice = self.rng.generator.dirichlet(alpha, size=self.dims.N)
        losses = self.rng.generator.random(self.dims.K)
        return EnvironmentStep(advice=advice, losses=losses)


# Scripted environments

@dataclass(frozen=True)
class Script:
    arms: np.ndarray    # T x N recommended arms, 0-based
    losses: np.ndarray  # T x K

    @property
    def N(self):
        return self.arms.shape[1]

    @property
    def K(self):
        return self.losses.shape[1]

    def __len__(self):
        return self.arms.shape[0]


def fixed_env_step(script: Script, t) -> EnvironmentStep:
    if not 1 <= t <= len(script):
        raise IndexError(f"round {t} outside script of length {len(script)}")
    advice = np.eye(script.K)[script.arms[t - 1]]
    return EnvironmentStep(advice=advice, losses=script.losses[t - 1].copy())


def load_script(path) -> Script:
    """
    Read a script environment: header `t,a_1..a_N,l_1..l_K`, arms 1-based,
    rows sorted by t starting at 1.
    """
    path = Path(path)
    logger.info(f"Loading script environment from {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "t":
            raise ConfigurationError(f"{path}: header must start with 't'")
        arm_cols = [i for i, name in enumerate(header) if name.startswith("a_")]
        loss_cols = [i for i, name in enumerate(header) if name.startswith("l_")]
        N, K = len(arm_cols), len(loss_cols)
        expected = ["t"] + [f"a_{h}" for h in range(1, N + 1)] + [f"l_{k}" for k in range(1, K + 1)]
        if header != expected or N == 0 or K == 0:
            raise ConfigurationError(f"{path}: header must read t,a_1,...,a_N,l_1,...,l_K")

        arms, losses = [], []
        for row_number, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                t = int(row[0])
                row_arms = [int(value) for value in row[1:1 + N]]
                row_losses = [float(value) for value in row[1 + N:1 + N + K]]
            except (ValueError, IndexError) as e:
                raise ConfigurationError(f"{path}: malformed row {row_number}: {e}") from e
            if t != row_number:
                raise ConfigurationError(f"{path}: expected t={row_number}, found t={t}")
            if len(row) != 1 + N + K or not all(1 <= a <= K for a in row_arms):
                raise ConfigurationError(f"{path}: row {row_number} needs {N} arms in 1..{K} and {K} losses")
            try:
                losses.append(validate_loss_vector(row_losses, K))
            except InvalidVectorError as e:
                raise ConfigurationError(f"{path}: row {row_number}: {e}") from e
            arms.append([a - 1 for a in row_arms])

    if not arms:
        raise ConfigurationError(f"{path}: script has no rounds")
    return Script(arms=np.array(arms, dtype=int), losses=np.array(losses, dtype=float))


def write_script(path, script: Script):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t"] + [f"a_{h}" for h in range(1, script.N + 1)]
                        + [f"l_{k}" for k in range(1, script.K + 1)])
        for t in range(len(script)):
            writer.writerow([t + 1] + [int(a) + 1 for a in script.arms[t]]
                            + [format_number(loss) for loss in script.losses[t]])


class ScriptedEnvironment(Environment):
    def __init__(self, dims: ProblemDims, script: Script):
        if (script.N, script.K) != (dims.N, dims.K):
            raise ConfigurationError(
                f"script has N={script.N}, K={script.K} but the problem has N={dims.N}, K={dims.K}")
        if len(script) < dims.T:
            raise ConfigurationError(f"script covers {len(script)} rounds, horizon is T={dims.T}")
        super().__init__(dims)
        self.script = script

    def step(self, t):
        return fixed_env_step(self.script, t)


# Balls into bins

def _max_loads(bins, K):
    """Largest bin occupancy of every trial (row) in `bins`."""
    batch = bins.shape[0]
    # one count over all trials: offset each trial's bins by K·trial
    keys = (bins + K * np.arange(batch, dtype=np.int64)[:, None]).ravel()
    if batch * K <= MAX_LOAD_CELLS:
        return np.bincount(keys, minlength=batch * K).reshape(batch, K).max(axis=1)
    # many bins: count only the occupied ones
    occupied, counts = np.unique(keys, return_counts=True)
    loads = np.zeros(batch, dtype=np.int64)
    np.maximum.at(loads, occupied // K, counts)
    return loads


def estimate_max_load(K, M, trials, rng: RngStream):
    """
    Monte-Carlo estimate of f(K, M), the expected maximum bin occupancy when M
    balls land uniformly at random in K bins.

    Memory per batch is bounded by MAX_LOAD_CELLS whatever the size of K or M.

    Args:
        K (int): Number of bins
        M (int): Number of balls
        trials (int): Independent throws of all M balls
        rng (RngStream): Stream the throws are drawn from

    Returns:
        tuple: (float: mean maximum load, float: its standard error)
    """
    if trials < 1:
        raise ParameterError(f"trials must be at least 1, got {trials}")
    if K == 1 or M == 1:
        return float(M if K == 1 else 1), 0.0

    loads = []
    remaining = trials
    batch_limit = max(1, min(MAX_LOAD_CHUNK, MAX_LOAD_CELLS // M))
    while remaining > 0:
        batch = min(remaining, batch_limit)
        bins = rng.generator.integers(K, size=(batch, M))
        loads.append(_max_loads(bins, K))
        remaining -= batch

    loads = np.concatenate(loads)
    stderr = float(loads.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return float(loads.mean()), stderr


def asymptotic_max_load(K, M):
    """Order-of-magnitude form max{log K, M/K}, reported next to the estimate."""
    return max(math.log(K), M / K)


def epsilon_setting(dims: ProblemDims, f_estimate):
    """ε = (1/8)·√(N / (f(K,M)·T)), capped at 1/4."""
    if not f_estimate > 0:
        raise ParameterError(f"max-load estimate must be positive, got {f_estimate}")
    epsilon = math.sqrt(dims.N / (f_estimate * dims.T)) / 8
    if epsilon > EPSILON_CAP:
        logger.warning(f"epsilon={epsilon:.4f} exceeds {EPSILON_CAP}; clamping (horizon T={dims.T} is small)")
        epsilon = EPSILON_CAP
    return epsilon


# Diagnostics

def query_match_counts(outcome, N):
    """
    Per-expert increments for one round: queried (L) and queried-and-followed (N).
    """
    queried = np.zeros(N, dtype=int)
    followed = np.zeros(N, dtype=int)
    queried[outcome.queried_experts] = 1
    followed[outcome.queried_experts] = outcome.queried_advice[:, outcome.played_arm] == 1.0
    return queried, followed


def record_diagnostics(outcome, advice, cfg: LowerBoundConfig) -> Diagnostics:
    """Diagnostics increment for h*: queried, and queried with A_t = h*(t)."""
    if cfg.hstar not in outcome.queried_experts:
        return Diagnostics()
    followed = int(advice[cfg.hstar, outcome.played_arm] == 1.0)
    return Diagnostics(L_count=1, N_count=followed)


def make_environment(kind, dims: ProblemDims, rng: RngStream, epsilon=0.0, hstar=None, script=None):
    """Build the environment for one replication from the experiment settings."""
    if kind == "lower_bound":
        if hstar is None:
            return LowerBoundEnvironment.with_random_hstar(dims, epsilon, rng)
        return LowerBoundEnvironment(LowerBoundConfig(hstar=hstar, epsilon=epsilon, dims=dims), rng)
    if kind == "null":
        return NullEnvironment(dims, epsilon, rng)
    if kind == "dirichlet":
        return DirichletEnvironment(dims, rng)
    if kind == "script":
        return ScriptedEnvironment(dims, script)
    raise ConfigurationError(f"unknown environment '{kind}'")

