import math

import numpy as np
import pytest
from pydantic import ValidationError

from modules import environments
from modules.bandit import partition_experts, play_round, run_episode
from modules.core import RngStream
from modules.environments import (AdviceOracle, LowerBoundEnvironment, NullEnvironment, Script,
                                  ScriptedEnvironment, asymptotic_max_load, epsilon_setting,
                                  estimate_max_load, fixed_env_step, load_script, lower_bound_step,
                                  null_step, query_match_counts, record_diagnostics, write_script)
from modules.models import Diagnostics, LowerBoundConfig, ProblemDims
from modules.utils import ConfigurationError, ParameterError


def within_three_stderr(samples, expected) -> bool:
    samples = np.asarray(samples, dtype=float)
    stderr = samples.std(ddof=1) / math.sqrt(len(samples))
    return abs(samples.mean() - expected) <= 3 * stderr


# Lower-bound and null adversaries

def test_lower_bound_arm_losses_have_the_mixed_marginal() -> None:
    dims = ProblemDims(N=8, K=4, M=2, T=1)
    cfg = LowerBoundConfig(hstar=3, epsilon=0.2, dims=dims)
    rng = RngStream(100, 0)
    losses = np.array([lower_bound_step(cfg, rng).losses for _ in range(100000)])
    for arm in range(4):
        assert within_three_stderr(losses[:, arm], 0.5 - 0.2 / 4)


def test_lower_bound_expert_losses_favor_the_planted_expert() -> None:
    dims = ProblemDims(N=8, K=4, M=2, T=1)
    cfg = LowerBoundConfig(hstar=5, epsilon=0.2, dims=dims)
    rng = RngStream(101, 0)
    expert_losses = np.array([lower_bound_step(cfg, rng).expert_losses() for _ in range(100000)])
    assert within_three_stderr(expert_losses[:, 5], 0.5 - 0.2)
    assert within_three_stderr(expert_losses[:, 0], 0.5 - 0.2 / 4)
    assert within_three_stderr(expert_losses[:, 7], 0.5 - 0.2 / 4)


def test_zero_gap_lower_bound_matches_null_draw_for_draw() -> None:
    dims = ProblemDims(N=5, K=3, M=1, T=1)
    cfg = LowerBoundConfig(hstar=2, epsilon=0.0, dims=dims)
    planted, null = RngStream(9, 0), RngStream(9, 0)
    for _ in range(100):
        a, b = lower_bound_step(cfg, planted), null_step(dims, 0.0, null)
        assert np.array_equal(a.advice, b.advice)
        assert np.array_equal(a.losses, b.losses)


def test_advice_rows_are_uniform_basis_vectors() -> None:
    dims = ProblemDims(N=6, K=3, M=2, T=1)
    rng = RngStream(12, 0)
    arms = []
    for _ in range(20000):
        advice = null_step(dims, 0.1, rng).advice
        assert np.all(advice.sum(axis=1) == 1.0)
        arms.append(advice.argmax(axis=1))
    arms = np.concatenate(arms)
    for arm in range(3):
        assert within_three_stderr(arms == arm, 1 / 3)


def test_null_losses_are_iid_with_mean_p() -> None:
    dims = ProblemDims(N=4, K=2, M=2, T=1)
    rng = RngStream(13, 0)
    steps = [null_step(dims, 0.3, rng) for _ in range(100000)]
    losses = np.array([step.losses for step in steps])
    assert within_three_stderr(losses[:, 0], 0.5 - 0.3 / 2)
    expert_losses = np.array([step.expert_losses() for step in steps])
    for h in range(4):
        assert within_three_stderr(expert_losses[:, h], 0.5 - 0.3 / 2)


def test_single_arm_null_environment() -> None:
    dims = ProblemDims(N=3, K=1, M=1, T=1)
    rng = RngStream(14, 0)
    steps = [null_step(dims, 0.1, rng) for _ in range(20000)]
    assert all(np.array_equal(step.advice, np.ones((3, 1))) for step in steps)
    assert within_three_stderr([step.losses[0] for step in steps], 0.4)


def test_null_step_rejects_out_of_range_gap() -> None:
    with pytest.raises(ParameterError):
        null_step(ProblemDims(N=2, K=2, M=1, T=1), 0.5, RngStream(0, 0))


def test_planted_expert_is_realized_best_with_a_wide_gap() -> None:
    dims = ProblemDims(N=8, K=4, M=2, T=2000)
    for run in range(20):
        env = LowerBoundEnvironment.with_random_hstar(dims, 0.2, RngStream.for_run(3, run, 0))
        totals = sum(env.step(t).expert_losses() for t in range(1, dims.T + 1))
        assert int(np.argmin(totals)) == env.hidden_best


@pytest.mark.slow
def test_planted_expert_wins_at_least_95_of_100_runs() -> None:
    dims = ProblemDims(N=8, K=4, M=2, T=10000)
    wins = 0
    for run in range(100):
        env = LowerBoundEnvironment.with_random_hstar(dims, 0.05, RngStream.for_run(8, run, 0))
        totals = np.zeros(dims.N)
        for t in range(1, dims.T + 1):
            totals += env.step(t).expert_losses()
        wins += int(np.argmin(totals) == env.hidden_best)
    assert wins >= 95


def test_environment_tables_do_not_depend_on_the_algorithm() -> None:
    dims = ProblemDims(N=4, K=3, M=2, T=150)
    records = [run_episode(dims, algo, LowerBoundEnvironment.with_random_hstar(dims, 0.1, RngStream(21, 0)),
                           seed=21)
               for algo in ("mw", "polyinf")]
    assert np.array_equal(records[0].expert_cum_loss, records[1].expert_cum_loss)
    assert records[0].hidden_best == records[1].hidden_best


# Balls into bins

@pytest.mark.parametrize("M", [1, 3, 7])
def test_single_bin_max_load_is_all_balls(M: int) -> None:
    assert estimate_max_load(1, M, 10, RngStream(0, 0)) == (float(M), 0.0)


@pytest.mark.parametrize("K", [1, 2, 9])
def test_single_ball_max_load_is_one(K: int) -> None:
    assert estimate_max_load(K, 1, 10, RngStream(0, 0))[0] == 1.0


def test_two_balls_two_bins_max_load() -> None:
    mean, stderr = estimate_max_load(2, 2, 100000, RngStream(15, 0))
    assert abs(mean - 1.5) <= 3 * stderr


@pytest.mark.parametrize("K, M", [(2, 5), (4, 2), (8, 16), (30, 3)])
def test_max_load_lies_between_mean_load_and_all_balls(K: int, M: int) -> None:
    mean, _ = estimate_max_load(K, M, 5000, RngStream(16, 0))
    assert M / K <= mean <= M


def test_max_load_stderr_shrinks_with_trials() -> None:
    _, coarse = estimate_max_load(4, 6, 1000, RngStream(17, 0))
    _, fine = estimate_max_load(4, 6, 100000, RngStream(17, 0))
    assert 7 <= coarse / fine <= 13


def test_max_load_rejects_zero_trials() -> None:
    with pytest.raises(ParameterError):
        estimate_max_load(2, 2, 0, RngStream(0, 0))


def test_max_load_with_many_bins_stays_within_memory() -> None:
    # a single dense count would need 10^4 trials x 2·10^5 bins
    mean, stderr = estimate_max_load(200000, 3, 20000, RngStream(18, 0))
    assert 1.0 <= mean <= 1.01
    assert stderr < 0.01


def test_sparse_and_dense_counts_agree(monkeypatch) -> None:
    bins = RngStream(19, 0).generator.integers(6, size=(300, 5))
    dense = environments._max_loads(bins, 6)
    monkeypatch.setattr(environments, "MAX_LOAD_CELLS", 16)
    sparse = environments._max_loads(bins, 6)
    assert np.array_equal(sparse, dense)
    assert np.array_equal(dense, [np.bincount(row).max() for row in bins])


def test_asymptotic_max_load() -> None:
    assert asymptotic_max_load(4, 2) == pytest.approx(math.log(4))
    assert asymptotic_max_load(2, 40) == 20


# Gap setting

def test_epsilon_setting_closed_form() -> None:
    assert epsilon_setting(ProblemDims(N=16, K=2, M=2, T=512), 2.0) == pytest.approx(1 / 64)


def test_epsilon_halves_when_horizon_quadruples() -> None:
    short = epsilon_setting(ProblemDims(N=16, K=4, M=2, T=1000), 1.25)
    long = epsilon_setting(ProblemDims(N=16, K=4, M=2, T=4000), 1.25)
    assert long == pytest.approx(short / 2)


def test_epsilon_with_unit_radicand() -> None:
    assert epsilon_setting(ProblemDims(N=8, K=2, M=2, T=4), 2.0) == pytest.approx(1 / 8)


def test_epsilon_is_clamped_for_tiny_horizons() -> None:
    assert epsilon_setting(ProblemDims(N=64, K=2, M=2, T=1), 1.0) == 0.25


def test_epsilon_rejects_nonpositive_load() -> None:
    with pytest.raises(ParameterError):
        epsilon_setting(ProblemDims(N=4, K=2, M=2, T=4), 0.0)


# Scripted environments

def sample_script() -> Script:
    return Script(arms=np.array([[0, 1, 1], [2, 2, 0]]), losses=np.array([[0.1, 0.7, 1.0], [1 / 3, 0.0, 0.25]]))


def test_fixed_step_echoes_the_script_row() -> None:
    step = fixed_env_step(sample_script(), 2)
    assert np.array_equal(step.advice, np.eye(3)[[2, 2, 0]])
    assert np.array_equal(step.losses, np.array([1 / 3, 0.0, 0.25]))


def test_fixed_step_outside_the_script() -> None:
    with pytest.raises(IndexError):
        fixed_env_step(sample_script(), 3)
    with pytest.raises(IndexError):
        fixed_env_step(sample_script(), 0)


def test_constant_script_repeats_its_step() -> None:
    script = Script(arms=np.tile([1, 0], (5, 1)), losses=np.tile([0.2, 0.9], (5, 1)))
    steps = [fixed_env_step(script, t) for t in range(1, 6)]
    assert all(np.array_equal(step.losses, steps[0].losses) for step in steps)
    assert all(np.array_equal(step.advice, steps[0].advice) for step in steps)


def test_script_file_round_trips(tmp_path) -> None:
    path = tmp_path / "script.csv"
    write_script(path, sample_script())
    assert path.read_text(encoding="utf-8").splitlines()[0] == "t,a_1,a_2,a_3,l_1,l_2,l_3"
    loaded = load_script(path)
    assert np.array_equal(loaded.arms, sample_script().arms)
    assert np.array_equal(loaded.losses, sample_script().losses)
    again = tmp_path / "again.csv"
    write_script(again, loaded)
    assert again.read_bytes() == path.read_bytes()


@pytest.mark.parametrize("text", [
    "t,a_1,l_1,l_2\n2,1,0.5,0.5\n",
    "t,a_1,l_1,l_2\n1,3,0.5,0.5\n",
    "t,a_1,l_1,l_2\n1,1,0.5,1.5\n",
    "t,a_2,l_1\n1,1,0.5\n",
    "x,a_1,l_1\n1,1,0.5\n",
    "t,a_1,l_1\n",
])
def test_malformed_scripts_are_rejected(write_csv, text: str) -> None:
    with pytest.raises(ConfigurationError):
        load_script(write_csv("bad.csv", text))


def test_scripted_environment_checks_dimensions() -> None:
    with pytest.raises(ConfigurationError):
        ScriptedEnvironment(ProblemDims(N=2, K=3, M=1, T=2), sample_script())
    with pytest.raises(ConfigurationError):
        ScriptedEnvironment(ProblemDims(N=3, K=3, M=1, T=5), sample_script())


# Diagnostics

def test_record_diagnostics_agrees_with_vectorized_counts() -> None:
    dims = ProblemDims(N=6, K=3, M=2, T=1)
    cfg = LowerBoundConfig(hstar=4, epsilon=0.1, dims=dims)
    part = partition_experts(dims)
    env_rng, algo_rng = RngStream(30, 0), RngStream(30, 1)
    q = np.random.default_rng(30).dirichlet(np.ones(6))
    total_L = total_N = 0
    for _ in range(500):
        step = lower_bound_step(cfg, env_rng)
        outcome = play_round(q, part, AdviceOracle(step, dims.M), algo_rng)
        increment = record_diagnostics(outcome, step.advice, cfg)
        queried, followed = query_match_counts(outcome, dims.N)
        assert queried.sum() == dims.M
        assert (increment.L_count, increment.N_count) == (queried[4], followed[4])
        total_L += increment.L_count
        total_N += increment.N_count
    assert 0 <= total_N <= total_L <= 500


def test_diagnostics_cannot_follow_more_than_queried() -> None:
    assert Diagnostics(L_count=3, N_count=3).N_count == 3
    with pytest.raises(ValidationError):
        Diagnostics(L_count=1, N_count=2)


def test_average_follow_rate_under_null_is_within_max_load() -> None:
    dims = ProblemDims(N=8, K=4, M=2, T=500)
    f_estimate, f_stderr = estimate_max_load(dims.K, dims.M, 100000, RngStream.auxiliary(31))
    rates = []
    for run in range(30):
        env = NullEnvironment(dims, 0.05, RngStream.for_run(31, run, 0))
        record = run_episode(dims, "mw", env, seed=31, run=run)
        # without a planted expert the counts are averages over all experts
        rates.append(record.N_count[-1] / dims.T)
    rates = np.array(rates)
    stderr = rates.std(ddof=1) / math.sqrt(len(rates))
    assert rates.mean() <= f_estimate / dims.N + 3 * (stderr + f_stderr / dims.N)
