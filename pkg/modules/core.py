"""
Shared helpers: seeded random streams, vector validation, sampling and
randomized rounding of advice vectors.
"""

from dataclasses import dataclass, field

import numpy as np

from modules.models import ProblemDims
from modules.utils import PROB_TOL, InvalidVectorError

ENVIRONMENT_ROLE = 0
ALGORITHM_ROLE = 1

# Auxiliary streams count down from here; replications never reach them
AUXILIARY_STREAM_ID = 2**63 - 1
MAX_LOAD_PURPOSE = 0
PARTITION_PURPOSE = 1


@dataclass(frozen=True)
class RngStream:
    """
    Independent, replayable random stream.

    The generator is seeded from SeedSequence(seed, spawn_key=(stream_id,)), so
    an identical (seed, stream_id) pair reproduces an identical draw sequence.
    """
    seed: int
    stream_id: int
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        object.__setattr__(self, "generator", np.random.default_rng(sequence))

    @classmethod
    def for_run(cls, seed, run, role):
        """Stream for replication `run`; role 0 is the environment, 1 the algorithm."""
        return cls(seed, 2 * run + role)

    @classmethod
    def auxiliary(cls, seed, purpose=MAX_LOAD_PURPOSE):
        return cls(seed, AUXILIARY_STREAM_ID - purpose)

    def uniform(self):
        return float(self.generator.random())


def effective_arms(dims: ProblemDims) -> int:
    """K' = min{K, M}, the most distinct arms a queried group can recommend."""
    return min(dims.K, dims.M)


def validate_probability_vector(probs, name="advice"):
    """
    Check that `probs` is a probability vector and return it renormalized.

    Entries must be finite and nonnegative with a sum within PROB_TOL of 1.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise InvalidVectorError(f"{name} must be a non-empty 1-D vector, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise InvalidVectorError(f"{name} has non-finite entries")
    if np.any(probs < 0.0):
        raise InvalidVectorError(f"{name} has a negative entry: {probs.min()}")
    total = probs.sum()
    if abs(total - 1.0) > PROB_TOL:
        raise InvalidVectorError(f"{name} sums to {total!r}, not 1")
    return probs / total


def validate_loss_vector(losses, K=None):
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 1 or (K is not None and losses.size != K):
        raise InvalidVectorError(f"loss vector must have length {K}, got shape {losses.shape}")
    if not np.all(np.isfinite(losses)) or np.any(losses < 0.0) or np.any(losses > 1.0):
        raise InvalidVectorError("losses must lie in [0, 1]")
    return losses


def basis_vector(K, arm):
    vector = np.zeros(K)
    vector[arm] = 1.0
    return vector


def is_basis_vector(vector):
    nonzero = np.flatnonzero(vector)
    return nonzero.size == 1 and vector[nonzero[0]] == 1.0


def inverse_cdf_index(probs, u):
    """
    Index selected by the uniform `u` in [0, 1) when walking `probs` in index order.

    Zero-mass entries are never returned; a `u` past the last cumulative value
    (floating-point shortfall) maps to the last index with positive mass.
    """
    cumulative = np.cumsum(probs)
    index = int(np.searchsorted(cumulative, u * cumulative[-1], side="right"))
    if index >= len(probs) or probs[index] <= 0.0:
        index = int(np.flatnonzero(probs)[-1])
    return index


def randomized_round(advice, rng: RngStream):
    """
    Round an advice vector to a standard basis vector e_a with Pr[a] = advice(a).

    Basis vectors come back unchanged without consuming randomness.
    """
    advice = np.asarray(advice, dtype=float)
    if is_basis_vector(advice):
        return advice
    probs = validate_probability_vector(advice)
    return basis_vector(len(probs), inverse_cdf_index(probs, rng.uniform()))


def round_advice_rows(rows, rng: RngStream):
    """Randomized rounding applied row by row, in row order."""
    return np.vstack([randomized_round(row, rng) for row in rows])
