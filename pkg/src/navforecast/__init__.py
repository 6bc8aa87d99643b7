"""Trajectory forecasting with per-patch navigation maps."""

from .dbn import PredictedPath, Prediction, PredictorConfig, TargetState, linear_baseline, predict, sample_path
from .evaluation import EvalReport, LinearPredictor, NavmapPredictor, mhd, run_benchmark
from .navmap import BuilderConfig, NavigationMap, PatchStats, SpeedFit, build_map
from .scene import PatchGrid, SemanticGrid, Trajectory, read_label_grid, read_trajectories, world_to_patch
from .synth import SynthSpec, generate_scene
from .transfer import ContextDescriptor, DescriptorIndex, build_index, transfer_map
from .utils import InsufficientDataError, NavForecastError, ValidationError

__version__ = "0.1.0"
