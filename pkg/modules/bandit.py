"""
The limited-advice bandit algorithm.

Experts are split into R = N/M fixed groups. Each round the algorithm samples
a group I_t with probability equal to the forecaster's mass on it, queries the
advice of that group only, samples an arm A_t from the group's q-weighted
advice mixture, and feeds importance-weighted expert losses back to the
forecaster.
"""

import math
from dataclasses import dataclass

import numpy as np

from modules.core import (ALGORITHM_ROLE, RngStream, effective_arms, inverse_cdf_index,
                          round_advice_rows)
from modules.environments import AdviceOracle, Environment, query_match_counts
from modules.forecasters import current_distribution, init_forecaster, update_forecaster
from modules.models import ProblemDims, RunRecord
from modules.utils import ConfigurationError, logger

PROBABILITY_FLOOR = 1e-300
FULL_LOGGING_HORIZON = 10000


@dataclass(frozen=True)
class GroupPartition:
    groups: np.ndarray    # R x M expert indices
    group_of: np.ndarray  # expert -> group index

    @property
    def R(self):
        return self.groups.shape[0]


@dataclass(frozen=True)
class RoundOutcome:
    sampled_group: int
    played_arm: int
    observed_loss: float
    probability: float              # Pr_t[I_t, A_t]
    estimated_arm_losses: np.ndarray
    expert_losses: np.ndarray
    queried_experts: np.ndarray
    queried_advice: np.ndarray      # rounded advice rows of the queried group


def partition_experts(dims: ProblemDims, shuffle_rng: RngStream = None) -> GroupPartition:
    """
    Contiguous blocks of M experts, or blocks of a seeded permutation when
    `shuffle_rng` is given.
    """
    if dims.N % dims.M != 0:
        raise ConfigurationError(
            f"advice budget M={dims.M} does not divide N={dims.N}; "
            "add dummy experts to reach a multiple of M or choose a divisor of N")
    order = np.arange(dims.N)
    if shuffle_rng is not None:
        order = shuffle_rng.generator.permutation(dims.N)
    groups = order.reshape(dims.N // dims.M, dims.M)
    group_of = np.empty(dims.N, dtype=int)
    for i, group in enumerate(groups):
        group_of[group] = i
    return GroupPartition(groups=groups, group_of=group_of)


def group_distribution(q, part: GroupPartition):
    """r(i) = Σ_{h∈B_i} q(h)."""
    return q[part.groups].sum(axis=1)


def group_arm_distribution(q, group, advice_rows, r_i):
    """
    p(a) = Σ_{h∈group} q(h)·ξ^h(a) / r_i.

    A group with no mass gets the uniform distribution over its recommended
    arms; it can never be sampled.
    """
    if r_i > 0:
        return q[group] @ advice_rows / r_i
    logger.warning(f"Experts {group.tolist()} have zero mass; using uniform play over their advice")
    active = advice_rows.any(axis=0).astype(float)
    return active / active.sum()


def importance_weighted_losses(N, group, advice_rows, probability, arm, loss):
    """
    Estimated arm losses ℓ(A_t)/Pr_t[I_t, A_t] on the played arm (zero elsewhere)
    and the induced expert losses ξ^h · ℓ̂ for the queried group (zero elsewhere).
    """
    estimated = np.zeros(advice_rows.shape[1])
    estimated[arm] = loss / probability
    expert_losses = np.zeros(N)
    expert_losses[group] = advice_rows @ estimated
    return estimated, expert_losses


def outcome_distribution(q, part: GroupPartition, advice):
    """
    Every (group, arm, Pr_t[group, arm]) with positive probability, for basis
    advice `advice` (N x K).
    """
    r = group_distribution(q, part)
    outcomes = []
    for i, group in enumerate(part.groups):
        if r[i] <= 0.0:
            continue
        p = group_arm_distribution(q, group, advice[group], r[i])
        for arm in np.flatnonzero(p):
            outcomes.append((i, int(arm), r[i] * p[arm]))
    return outcomes


def play_round(q, part: GroupPartition, oracle: AdviceOracle, rng: RngStream) -> RoundOutcome:
    """
    One round of two-stage sampling: draw a group, query its advice, draw an arm.

    Args:
        q (np.ndarray): Forecaster distribution over the N experts
        part (GroupPartition): Fixed split of the experts into groups of M
        oracle (AdviceOracle): Fresh oracle for this round's environment step
        rng (RngStream): Algorithm stream
    Returns:
        RoundOutcome: Played arm, its loss and probability, and the estimated losses
    """
    r = group_distribution(q, part)
    sampled_group = inverse_cdf_index(r, rng.uniform())
    group = part.groups[sampled_group]

    # only the sampled group's advice is ever requested
    advice_rows = round_advice_rows(oracle.query(group), rng)
    p = group_arm_distribution(q, group, advice_rows, r[sampled_group])
    arm = inverse_cdf_index(p, rng.uniform())
    loss = oracle.observe_loss(arm)

    probability = r[sampled_group] * p[arm]
    assert probability > PROBABILITY_FLOOR, f"Pr[I_t, A_t] = {probability} for a sampled pair"
    estimated, expert_losses = importance_weighted_losses(
        len(q), group, advice_rows, probability, arm, loss)
    return RoundOutcome(
        sampled_group=sampled_group,
        played_arm=arm,
        observed_loss=loss,
        probability=probability,
        estimated_arm_losses=estimated,
        expert_losses=expert_losses,
        queried_experts=group,
        queried_advice=advice_rows,
    )


def default_stride(T):
    return 1 if T <= FULL_LOGGING_HORIZON else math.ceil(T / FULL_LOGGING_HORIZON)


def run_episode(dims: ProblemDims, algo, environment: Environment, seed, run=0,
                eta=None, partition: GroupPartition = None, stride=None) -> RunRecord:
    """
    Play T rounds of `algo` against `environment`.

    Algorithm randomness comes from stream (seed, 2·run + 1); the environment
    owns its stream. Cumulative series are logged every `stride` rounds and at T.

    Args:
        dims (ProblemDims): Problem sizes
        algo (str): 'mw' or 'polyinf'
        environment (Environment): Source of each round's advice and losses
        seed (int): Master seed
        run (int): Replication index
        eta (float, optional): Overrides the tuned learning rate
        partition (GroupPartition, optional): Expert groups; contiguous blocks by default
        stride (int, optional): Logging stride; see `default_stride`
    Returns:
        RunRecord: Logged cumulative series, final regret and h* diagnostics
    """
    partition = partition if partition is not None else partition_experts(dims)
    rng = RngStream.for_run(seed, run, ALGORITHM_ROLE)
    state = init_forecaster(algo, dims, eta)
    stride = stride or default_stride(dims.T)
    hidden_best = environment.hidden_best
    logger.debug(f"Run {run}: {algo} on {type(environment).__name__}, K'={effective_arms(dims)}, "
                 f"R={partition.R}, hidden best={hidden_best}")

    logged_t = [t for t in range(1, dims.T + 1) if t % stride == 0 or t == dims.T]
    n_logged = len(logged_t)
    alg_series = np.empty(n_logged)
    best_series = np.empty(n_logged)
    count_dtype = int if hidden_best is not None else float
    L_series = np.empty(n_logged, dtype=count_dtype)
    N_series = np.empty(n_logged, dtype=count_dtype)

    alg_cum_loss = 0.0
    expert_cum_loss = np.zeros(dims.N)
    L_counts = np.zeros(dims.N, dtype=int)
    N_counts = np.zeros(dims.N, dtype=int)
    slot = 0

    for t in range(1, dims.T + 1):
        step = environment.step(t)
        q = current_distribution(state)
        outcome = play_round(q, partition, AdviceOracle(step, dims.M), rng)

        alg_cum_loss += outcome.observed_loss
        expert_cum_loss += step.expert_losses()
        queried, followed = query_match_counts(outcome, dims.N)
        L_counts += queried
        N_counts += followed
        state = update_forecaster(state, outcome.expert_losses)

        if slot < n_logged and t == logged_t[slot]:
            alg_series[slot] = alg_cum_loss
            best_series[slot] = expert_cum_loss.min()
            if hidden_best is not None:
                L_series[slot] = L_counts[hidden_best]
                N_series[slot] = N_counts[hidden_best]
            else:
                L_series[slot] = L_counts.mean()
                N_series[slot] = N_counts.mean()
            slot += 1

    return RunRecord(
        run=run,
        t=np.array(logged_t),
        alg_cum_loss=alg_series,
        best_expert_cum_loss=best_series,
        regret=alg_series - best_series,
        L_count=L_series,
        N_count=N_series,
        expert_cum_loss=expert_cum_loss,
        hidden_best=hidden_best,
        hidden_best_cum_loss=None if hidden_best is None else float(expert_cum_loss[hidden_best]),
    )
