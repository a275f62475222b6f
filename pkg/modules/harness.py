import csv
import datetime
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from modules.bandit import GroupPartition, partition_experts, run_episode
from modules.core import (ENVIRONMENT_ROLE, PARTITION_PURPOSE, RngStream, effective_arms)
from modules.environments import (Script, asymptotic_max_load, epsilon_setting,
                                  estimate_max_load, load_script, make_environment)
from modules.models import (ExperimentConfig, ExperimentSummary, ProblemDims, RunRecord,
                            ScalingPoint, TheoreticalBounds)
from modules.utils import ConfigurationError, format_number, logger

TIMESERIES_HEADER = ["run", "t", "alg_cum_loss", "best_expert_cum_loss", "regret", "L_count", "N_count"]
SUMMARY_HEADER = ["algo", "N", "K", "M", "T", "runs", "mean_regret", "stderr",
                  "mw_bound", "polyinf_bound", "lower_bound_estimate"]
SCALING_HEADER = ["T", "mean_regret", "stderr", "mw_bound", "polyinf_bound", "lower_bound_estimate"]


def theoretical_bounds(dims: ProblemDims, f_estimate=None, f_stderr=0.0, f_trials=100000, seed=0):
    """
    Regret guarantees of both forecasters and the lower-bound value
    (1/32)·√(N·T / f(K, M)).

    f(K, M) is estimated by Monte-Carlo from the auxiliary stream of `seed`
    unless `f_estimate` is given.

    Args:
        dims (ProblemDims): Problem sizes
        f_estimate (float, optional): Known f(K, M); skips the estimate
        f_stderr (float): Standard error reported with a given `f_estimate`
        f_trials (int): Monte-Carlo trials for the estimate
        seed (int): Master seed
    Returns:
        TheoreticalBounds: Both upper bounds, the lower-bound value and f(K, M)
    """
    if f_estimate is None:
        f_estimate, f_stderr = estimate_max_load(dims.K, dims.M, f_trials, RngStream.auxiliary(seed))
    f_asymptotic = asymptotic_max_load(dims.K, dims.M)
    if dims.N == 1:
        return TheoreticalBounds(mw_bound=0.0, polyinf_bound=0.0, lower_bound=0.0,
                                 f_estimate=f_estimate, f_stderr=f_stderr, f_asymptotic=f_asymptotic)

    k_eff = effective_arms(dims)
    N, M, T = dims.N, dims.M, dims.T
    return TheoreticalBounds(
        mw_bound=math.sqrt(2 * k_eff * N * math.log(N) / M * T),
        polyinf_bound=4 * math.sqrt(k_eff * N * math.log(8 * M / k_eff) / M * T),
        lower_bound=math.sqrt(N / f_estimate * T) / 32,
        f_estimate=f_estimate,
        f_stderr=f_stderr,
        f_asymptotic=f_asymptotic,
    )


@dataclass(frozen=True)
class _Replication:
    dims: ProblemDims
    algo: str
    env_kind: str
    epsilon: float
    hstar: Optional[int]
    script: Optional[Script]
    seed: int
    run: int
    eta: Optional[float]
    partition: GroupPartition
    stride: Optional[int]


def _run_replication(job: _Replication) -> RunRecord:
    env_rng = RngStream.for_run(job.seed, job.run, ENVIRONMENT_ROLE)
    environment = make_environment(job.env_kind, job.dims, env_rng, epsilon=job.epsilon,
                                   hstar=job.hstar, script=job.script)
    record = run_episode(job.dims, job.algo, environment, job.seed, run=job.run,
                         eta=job.eta, partition=job.partition, stride=job.stride)
    logger.debug(f"Run {job.run} finished with regret {record.final_regret:.4f}")
    return record


def write_timeseries(path, records):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TIMESERIES_HEADER)
        for record in records:
            for i in range(len(record.t)):
                writer.writerow([record.run] + [format_number(value) for value in (
                    record.t[i], record.alg_cum_loss[i], record.best_expert_cum_loss[i],
                    record.regret[i], record.L_count[i], record.N_count[i])])


def write_summary(path, summary: ExperimentSummary):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        writer.writerow([summary.algo] + [format_number(getattr(summary, name))
                                          for name in SUMMARY_HEADER[1:]])


def mean_and_stderr(values):
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def run_experiment(cfg: ExperimentConfig) -> ExperimentSummary:
    """
    Run `cfg.runs` independent replications and write `timeseries.csv` and
    `summary.csv` into `cfg.out`.

    Results are collected in run-index order, so the files do not depend on the
    worker count.

    Args:
        cfg (ExperimentConfig): Validated experiment settings
    Returns:
        ExperimentSummary: Mean final regret, its standard error and the bounds
    """
    logger.info(f"Starting experiment: {cfg.algo} on {cfg.env}, N={cfg.dims.N}, K={cfg.dims.K}, "
                f"M={cfg.dims.M}, T={cfg.dims.T}, runs={cfg.runs}, seed={cfg.seed}")
    start_time = datetime.datetime.now()
    dims = cfg.dims

    script = None
    if cfg.env_kind == "script":
        script = load_script(cfg.script_path)
        if (script.N, script.K) != (dims.N, dims.K) or len(script) < dims.T:
            raise ConfigurationError(
                f"script {cfg.script_path} is N={script.N}, K={script.K}, {len(script)} rounds; "
                f"the experiment needs N={dims.N}, K={dims.K}, T={dims.T}")

    shuffle_rng = RngStream.auxiliary(cfg.seed, PARTITION_PURPOSE) if cfg.shuffle_partition else None
    partition = partition_experts(dims, shuffle_rng)

    bounds = theoretical_bounds(dims, f_trials=cfg.f_trials, seed=cfg.seed)
    logger.info(f"f(K,M) estimate {bounds.f_estimate:.4f} ± {bounds.f_stderr:.4f} "
                f"(asymptotic form {bounds.f_asymptotic:.4f})")

    epsilon = 0.0
    if cfg.env_kind in ("lower_bound", "null"):
        epsilon = cfg.epsilon_override if cfg.epsilon_override is not None \
            else epsilon_setting(dims, bounds.f_estimate)
        logger.info(f"Environment gap epsilon={epsilon:.6g}")

    jobs = [_Replication(dims=dims, algo=cfg.algo, env_kind=cfg.env_kind, epsilon=epsilon,
                         hstar=cfg.hstar, script=script, seed=cfg.seed, run=run,
                         eta=cfg.eta_override, partition=partition, stride=cfg.stride)
            for run in range(cfg.runs)]

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as executor:
            records = list(executor.map(_run_replication, jobs))
    else:
        records = [_run_replication(job) for job in jobs]

    finals = [record.final_regret for record in records]
    mean_regret, stderr = mean_and_stderr(finals)
    summary = ExperimentSummary(
        algo=cfg.algo, N=dims.N, K=dims.K, M=dims.M, T=dims.T, runs=cfg.runs,
        mean_regret=mean_regret, stderr=stderr,
        mw_bound=bounds.mw_bound, polyinf_bound=bounds.polyinf_bound,
        lower_bound_estimate=bounds.lower_bound, final_regrets=finals,
    )

    if cfg.env_kind == "lower_bound":
        versus_hidden = [record.final_regret_vs_hidden_best for record in records]
        hidden_won = sum(int(np.argmin(record.expert_cum_loss) == record.hidden_best) for record in records)
        logger.info(f"Mean regret against the planted expert: {np.mean(versus_hidden):.4f}; "
                    f"planted expert was the realized best in {hidden_won}/{cfg.runs} runs")

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_timeseries(out / "timeseries.csv", records)
    write_summary(out / "summary.csv", summary)

    execution_time = (datetime.datetime.now() - start_time).total_seconds()
    logger.info(f"Mean final regret {mean_regret:.4f} ± {stderr:.4f} "
                f"(MW bound {bounds.mw_bound:.2f}, PolyINF bound {bounds.polyinf_bound:.2f}, "
                f"lower bound {bounds.lower_bound:.2f})")
    logger.info(f"Experiment completed in {execution_time:.2f} seconds; results in {out}")
    return summary


def fit_loglog_slope(horizons, regrets):
    """
    Least-squares slope and intercept of log(regret) against log(T), or None
    when fewer than two points exist or some regret is not positive.
    """
    regrets = np.asarray(regrets, dtype=float)
    if len(regrets) < 2 or np.any(regrets <= 0.0):
        return None
    slope, intercept = np.polyfit(np.log(horizons), np.log(regrets), 1)
    return float(slope), float(intercept)


def scaling_study(cfg: ExperimentConfig, T_list):
    """
    One experiment per horizon in `T_list` (ascending), each in `<out>/T_<T>`.

    Writes `scaling.csv` and `scaling_fit.csv` into `cfg.out`.

    Args:
        cfg (ExperimentConfig): Settings shared by every horizon; `cfg.dims.T` is ignored
        T_list (list): Strictly ascending horizons
    Returns:
        tuple: (list of ScalingPoint, (slope, intercept) or None if the slope is undefined)
    """
    T_list = list(T_list)
    if not T_list or any(later <= earlier for earlier, later in zip(T_list, T_list[1:])):
        raise ConfigurationError(f"T list must be non-empty and strictly ascending, got {T_list}")

    points = []
    for T in T_list:
        dims = ProblemDims(N=cfg.dims.N, K=cfg.dims.K, M=cfg.dims.M, T=T)
        sub_cfg = cfg.model_copy(update={"dims": dims, "out": Path(cfg.out) / f"T_{T}"})
        summary = run_experiment(sub_cfg)
        points.append(ScalingPoint(T=T, mean_regret=summary.mean_regret, stderr=summary.stderr,
                                   mw_bound=summary.mw_bound, polyinf_bound=summary.polyinf_bound,
                                   lower_bound_estimate=summary.lower_bound_estimate))

    fit = fit_loglog_slope([p.T for p in points], [p.mean_regret for p in points])
    if fit is None:
        logger.warning("Log-log slope is undefined (fewer than two horizons or non-positive regret)")
    else:
        logger.info(f"Fitted log-log slope of mean regret against T: {fit[0]:.4f}")

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scaling.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SCALING_HEADER)
        for point in points:
            writer.writerow([format_number(getattr(point, name)) for name in SCALING_HEADER])
    with open(out / "scaling_fit.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["slope", "intercept", "points"])
        if fit is None:
            writer.writerow(["undefined", "undefined", len(points)])
        else:
            writer.writerow([format_number(fit[0]), format_number(fit[1]), len(points)])
    return points, fit
