"""Next-POI recommendation with a trajectory flow map, a GCN and a transformer encoder."""

from .config import TrainConfig
from .dataset import CheckIn, Dataset, Trajectory, cohort_labels, ingest, preprocess, synthesize
from .evaluation import EvalReport, cohort_evaluate, evaluate
from .flow_map import FlowMap, build_from_dataset
from .model import GETNext
from .training import train

__all__ = [
    "TrainConfig", "CheckIn", "Dataset", "Trajectory", "cohort_labels", "ingest", "preprocess",
    "synthesize", "EvalReport", "cohort_evaluate", "evaluate", "FlowMap", "build_from_dataset",
    "GETNext", "train",
]
__version__ = "0.1.0"
