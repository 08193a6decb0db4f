"""Event-based optical flow with bidirectional temporal correlation and adaptive motion aggregation."""
from .config import DataConfig, ModelConfig, RunConfig, TrainConfig
from .events import EventStream, SyntheticSceneSpec, read_events, save_events, synthesize_events
from .model import BATNet
from .voxel import VoxelGrid, voxelize

__version__ = "0.1.0"

__all__ = ["BATNet", "DataConfig", "EventStream", "ModelConfig", "RunConfig", "SyntheticSceneSpec",
           "TrainConfig", "VoxelGrid", "read_events", "save_events", "synthesize_events", "voxelize"]
