"""Sequential balanced and spatially balanced survey sampling for data streams.

The sampler decides unit by unit whether each arriving population element
enters the sample while preserving the prescribed inclusion probabilities,
keeping the sample balanced on auxiliary variables, and, when coordinates
are available, spreading it in space.
"""

from .baselines import DesignSpec, local_pivotal, poisson_sample, rejective_poisson
from .core import (
    Population,
    Unit,
    balance_residual,
    ht_estimate,
    population_from_arrays,
    validate_population,
)
from .errors import (
    ConfigurationError,
    DataError,
    DegenerateVarianceError,
    DimensionError,
    InvariantError,
    LpNumericalError,
    SamplingError,
    StreambalError,
    ValidationError,
)
from .harness import (
    ColumnBindings,
    PiSpec,
    SimulationReport,
    StudyConfig,
    emit_report,
    load_population_csv,
    proportional_probabilities,
    run_proposed,
    run_simulation,
)
from .lp import FlightLpProblem, FlightLpSolution, bounds_for, solve
from .sampler import (
    DecisionRecord,
    SamplerConfig,
    StreamSampler,
    reorder_candidates,
    select_pivot,
)
from .spread import ContiguityMatrix, build_contiguity_matrix, morans_i, voronoi_balance

__version__ = "0.1.0"

__all__ = [
    "ColumnBindings",
    "ConfigurationError",
    "ContiguityMatrix",
    "DataError",
    "DecisionRecord",
    "DegenerateVarianceError",
    "DesignSpec",
    "DimensionError",
    "FlightLpProblem",
    "FlightLpSolution",
    "InvariantError",
    "LpNumericalError",
    "PiSpec",
    "Population",
    "SamplerConfig",
    "SamplingError",
    "SimulationReport",
    "StreamSampler",
    "StreambalError",
    "StudyConfig",
    "Unit",
    "ValidationError",
    "balance_residual",
    "bounds_for",
    "build_contiguity_matrix",
    "emit_report",
    "ht_estimate",
    "load_population_csv",
    "local_pivotal",
    "morans_i",
    "poisson_sample",
    "population_from_arrays",
    "proportional_probabilities",
    "rejective_poisson",
    "reorder_candidates",
    "run_proposed",
    "run_simulation",
    "select_pivot",
    "solve",
    "validate_population",
    "voronoi_balance",
]
