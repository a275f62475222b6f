import logging
import os
from dotenv import load_dotenv

# Load environment variables from .env file if present
load_dotenv()

# Configure logging
_handlers = [logging.StreamHandler()]
if os.environ.get("BANDIT_LOG_FILE"):
    _handlers.append(logging.FileHandler(os.environ["BANDIT_LOG_FILE"]))

logging.basicConfig(
    level=os.environ.get("BANDIT_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=_handlers
)
logger = logging.getLogger("LimitedAdviceBandits")

# Defaults that CLI flags override
DEFAULT_WORKERS = int(os.environ.get("BANDIT_WORKERS", "1"))
DEFAULT_F_TRIALS = int(os.environ.get("BANDIT_F_TRIALS", "100000"))
DEFAULT_OUTPUT_DIR = os.environ.get("BANDIT_OUTPUT_DIR", "results")

# Absolute tolerance for probability vectors
PROB_TOL = 1e-9


class SimulationError(Exception):
    """Base class for every error raised on purpose by the simulator."""


class InvalidVectorError(SimulationError, ValueError):
    """A probability or loss vector violates its type invariants."""


class ParameterError(SimulationError, ValueError):
    """A forecaster or environment parameter is outside its legal range."""


class ConfigurationError(SimulationError, ValueError):
    """The problem or experiment configuration cannot be run."""


class LossContractError(SimulationError, ValueError):
    """A forecaster received a negative expert loss."""


class AdviceBudgetError(SimulationError, RuntimeError):
    """More advice or feedback was requested than a round allows."""


class SolverError(SimulationError, RuntimeError):
    """The normalization solve failed on a state that should always be solvable."""


def format_number(value):
    """
    Format a number for CSV output.

    Integers are written as-is; floats with 17 significant digits so that
    parsing the file back yields the identical double.
    """
    if isinstance(value, (bool, int)):
        return str(int(value))
    if hasattr(value, "dtype") and value.dtype.kind in "iub":
        return str(int(value))
    return format(float(value), ".17g")
