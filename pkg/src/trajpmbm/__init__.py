"""Extended-target PMBM filtering over sets of trajectories."""

from .ggiw import GGIW, MotionModel, SensorModel, ggiw_missed, ggiw_predict, ggiw_update
from .pmbm import (ALL, CURRENT, AssociationConfig, EmptyPosteriorError, PmbmPosterior,
                   ReductionConfig, estimate, predict, predict_all, predict_current, reduce, update)
from .trajectory import TrajectoryRecord, birth_intensity, read_trajectories, write_trajectories

__version__ = "0.1.0"

__all__ = [
    "GGIW", "MotionModel", "SensorModel", "ggiw_missed", "ggiw_predict", "ggiw_update",
    "ALL", "CURRENT", "AssociationConfig", "EmptyPosteriorError", "PmbmPosterior", "ReductionConfig",
    "estimate", "predict", "predict_all", "predict_current", "reduce", "update",
    "TrajectoryRecord", "birth_intensity", "read_trajectories", "write_trajectories",
]
