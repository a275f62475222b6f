"""
Prediction-with-expert-advice backends.

Both forecasters are plain immutable states: an update returns a new state and
never mutates the old one. `current_distribution` and `update_forecaster`
dispatch on the state type so the episode loop does not care which backend runs.
"""

import math
from dataclasses import dataclass
from functools import singledispatch

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from modules.core import effective_arms
from modules.models import ProblemDims
from modules.utils import PROB_TOL, LossContractError, ParameterError, SolverError, logger

POLYINF_RESIDUAL_TOL = 1e-10
POLYINF_MAX_ITER = 200
# exp() of anything below this is 0.0 in double precision
MW_LOG_UNDERFLOW = math.log(np.finfo(float).smallest_subnormal)


@dataclass(frozen=True)
class MWState:
    eta: float
    log_weights: np.ndarray  # normalized: exp(log_weights) sums to 1


@dataclass(frozen=True)
class PolyInfState:
    eta: float
    c: float
    cum_loss: np.ndarray
    last_C: float
    residual: float = 0.0


def _check_expert_losses(y, N):
    y = np.asarray(y, dtype=float)
    if y.shape != (N,):
        raise LossContractError(f"expected {N} expert losses, got shape {y.shape}")
    if not np.all(np.isfinite(y)) or np.any(y < 0.0):
        raise LossContractError("expert losses must be finite and nonnegative")
    return y


# Multiplicative Weights

def mw_init(dims: ProblemDims, eta) -> MWState:
    """
    Uniform MW forecaster over dims.N experts.

    Args:
        dims (ProblemDims): Problem sizes; only N is used
        eta (float): Learning rate, must be positive
    Returns:
        MWState: State whose distribution is 1/N on every expert
    """
    if not eta > 0:
        raise ParameterError(f"MW learning rate must be positive, got {eta}")
    return MWState(eta=float(eta), log_weights=np.full(dims.N, -math.log(dims.N)))


def mw_update(state: MWState, y) -> MWState:
    """
    q_{t+1}(h) ∝ q_t(h)·exp(−η·y_h), renormalized by log-sum-exp.

    Args:
        state (MWState): Current forecaster
        y (np.ndarray): Estimated expert losses, finite and nonnegative
    Returns:
        MWState: Updated forecaster; `state` is left unchanged
    """
    y = _check_expert_losses(y, len(state.log_weights))
    log_weights = state.log_weights - state.eta * y
    log_weights = log_weights - logsumexp(log_weights)
    if log_weights.min() < MW_LOG_UNDERFLOW <= state.log_weights.min():
        logger.warning(f"MW weight of expert {int(log_weights.argmin())} underflows to 0 "
                       f"(log weight {log_weights.min():.6g})")
    return MWState(eta=state.eta, log_weights=log_weights)


def mw_eta(dims: ProblemDims) -> float:
    """η = √(2·M·log N / (K'·N·T))."""
    if dims.N == 1:
        raise ParameterError("MW learning rate is undefined for a single expert (log N = 0)")
    return math.sqrt(2 * dims.M * math.log(dims.N) / (effective_arms(dims) * dims.N * dims.T))


# PolyINF

def polyinf_params(dims: ProblemDims):
    """
    Potential exponent c = log(8M/K') and rate
    η = 2·N^{1/(2c)}·[c·(R·K')^{1−1/c}·T]^{−1/2} with R = N/M.
    """
    k_eff = effective_arms(dims)
    c = math.log(8 * dims.M / k_eff)
    if c <= 1:
        raise ParameterError(f"PolyINF requires c > 1, got c={c}")
    if c < 2:
        logger.warning(f"PolyINF exponent c={c:.4f} is below 2; the tuned regret bound assumes c >= 2")
    R = dims.N / dims.M
    eta = 2 * dims.N ** (1 / (2 * c)) * (c * (R * k_eff) ** (1 - 1 / c) * dims.T) ** -0.5
    return c, eta


def _polyinf_weights(cum_loss, C, eta, c):
    return (eta * (cum_loss + C)) ** -c


def _normalization_gap(C, cum_loss, eta, c):
    return _polyinf_weights(cum_loss, C, eta, c).sum() - 1.0


def solve_normalization(cum_loss, eta, c, upper_hint=None):
    """
    Solve Σ_h [η(L_h + C)]^{−c} = 1 for C.

    The sum is strictly decreasing in C. At C_lo = 1/η − min_h L_h the leading
    expert has weight exactly 1, so the sum is ≥ 1; the upper bracket is the
    hint (previous constant) when valid, otherwise found by doubling.
    Returns (C, residual).
    """
    lo = 1.0 / eta - cum_loss.min()
    gap_lo = _normalization_gap(lo, cum_loss, eta, c)
    if abs(gap_lo) <= POLYINF_RESIDUAL_TOL:
        return lo, abs(gap_lo)

    gap_hint = None
    if upper_hint is not None and upper_hint > lo:
        gap_hint = _normalization_gap(upper_hint, cum_loss, eta, c)
        if abs(gap_hint) <= POLYINF_RESIDUAL_TOL:
            return upper_hint, abs(gap_hint)

    if gap_hint is not None and gap_hint < 0:
        hi = upper_hint
    else:
        step = 1.0
        hi = lo + step
        for _ in range(POLYINF_MAX_ITER):
            if _normalization_gap(hi, cum_loss, eta, c) < 0:
                break
            step *= 2.0
            hi = lo + step
        else:
            raise SolverError(f"could not bracket the PolyINF normalization constant above C={lo}")

    try:
        C = brentq(_normalization_gap, lo, hi, args=(cum_loss, eta, c),
                   xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=POLYINF_MAX_ITER)
    except (RuntimeError, ValueError) as e:
        raise SolverError(f"PolyINF normalization solve failed: {e}") from e
    residual = abs(_normalization_gap(C, cum_loss, eta, c))
    if residual > POLYINF_RESIDUAL_TOL:
        raise SolverError(f"PolyINF normalization residual {residual:.3e} exceeds {POLYINF_RESIDUAL_TOL}")
    return C, residual


def polyinf_init(dims: ProblemDims, c, eta) -> PolyInfState:
    """
    PolyINF forecaster with zero cumulative loss.

    Args:
        dims (ProblemDims): Problem sizes; only N is used
        c (float): Potential exponent, must exceed 1
        eta (float): Rate, must be positive
    Returns:
        PolyInfState: State whose distribution is 1/N on every expert
    """
    if not c > 1:
        raise ParameterError(f"PolyINF requires c > 1, got {c}")
    if not eta > 0:
        raise ParameterError(f"PolyINF rate must be positive, got {eta}")
    # C_1 = N^{1/c}/η makes every weight 1/N
    C = dims.N ** (1.0 / c) / eta
    cum_loss = np.zeros(dims.N)
    residual = abs(_normalization_gap(C, cum_loss, eta, c))
    return PolyInfState(eta=float(eta), c=float(c), cum_loss=cum_loss, last_C=C, residual=residual)


def polyinf_update(state: PolyInfState, y) -> PolyInfState:
    """
    Add `y` to the cumulative losses and re-solve the normalization constant.
    A failed solve raises SolverError.

    Args:
        state (PolyInfState): Current forecaster
        y (np.ndarray): Estimated expert losses, finite and nonnegative
    Returns:
        PolyInfState: Updated forecaster; `state` is left unchanged
    """
    y = _check_expert_losses(y, len(state.cum_loss))
    cum_loss = state.cum_loss + y
    C, residual = solve_normalization(cum_loss, state.eta, state.c, upper_hint=state.last_C)
    return PolyInfState(eta=state.eta, c=state.c, cum_loss=cum_loss, last_C=C, residual=residual)


# Backend-agnostic access

@singledispatch
def current_distribution(state):
    raise TypeError(f"not a forecaster state: {type(state).__name__}")


@current_distribution.register
def _(state: MWState):
    return np.exp(state.log_weights)


@current_distribution.register
def _(state: PolyInfState):
    weights = _polyinf_weights(state.cum_loss, state.last_C, state.eta, state.c)
    # the solve leaves |Σ − 1| ≤ 1e-10; dividing removes the rest
    return weights / weights.sum()


@singledispatch
def update_forecaster(state, y):
    raise TypeError(f"not a forecaster state: {type(state).__name__}")


@update_forecaster.register
def _(state: MWState, y):
    return mw_update(state, y)


@update_forecaster.register
def _(state: PolyInfState, y):
    return polyinf_update(state, y)


def init_forecaster(algo, dims: ProblemDims, eta=None):
    """
    Fresh forecaster for `algo` with tuned parameters.

    Args:
        algo (str): 'mw' or 'polyinf'
        dims (ProblemDims): Problem sizes the parameters are tuned for
        eta (float, optional): Overrides the tuned learning rate
    Returns:
        MWState | PolyInfState: The initial forecaster state
    """
    if algo == "mw":
        if eta is None:
            if dims.N == 1:
                logger.debug("Single expert: MW distribution is constant, using eta=1")
                eta = 1.0
            else:
                eta = mw_eta(dims)
        logger.debug(f"MW forecaster with eta={eta:.6g}")
        return mw_init(dims, eta)
    if algo == "polyinf":
        c, tuned_eta = polyinf_params(dims)
        eta = tuned_eta if eta is None else eta
        logger.debug(f"PolyINF forecaster with c={c:.6g}, eta={eta:.6g}")
        return polyinf_init(dims, c, eta)
    raise ParameterError(f"unknown forecaster '{algo}'")


def distribution_is_valid(q):
    return bool(np.all(q > 0.0) and abs(q.sum() - 1.0) <= PROB_TOL)
