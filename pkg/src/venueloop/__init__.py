"""Simulate the feedback loop between venue recommenders and urban mobility."""

from .engine import SimulationConfig, World, run_simulation, sweep
from .ingest import Dataset, SplitSpec, Venue, VisitEvent, load_checkins, preprocess, split
from .mobility import ExplorationPolicy
from .recsys import TrainingHyper, evaluate, recommend, train

__version__ = "0.1.0"
