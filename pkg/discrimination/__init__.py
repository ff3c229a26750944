"""Active model discrimination: optimal separating inputs for affine models."""
from .errors import (AllInvalidated, BackendError, DiscriminationError, SamplingFailed, ScenarioError,
                     SuboptimalityWarning, UnsupportedObjectiveError)
from .formulation import DesignResult, compare, complexity_report, design, pair_elimination, verify_design
from .invalidation import ObservationWindow, identify, invalidate_model, timeline
from .model import AffineModel, ObjectiveKind, ObjectiveSpec, Polytope, Scenario, load_scenario, save_scenario
from .scenarios import build_intersection, build_lane_change, build_numerical_example, run_simulation

__version__ = "0.1.0"
