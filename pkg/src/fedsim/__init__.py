"""Deterministic federated-learning simulator with local DP, ALDP and SecAgg+."""

from ._accel import BACKEND
from .dataset import SiteDataset, SiteRecord, SynthSpec, class_weights, generate, load_csv, save_csv
from .errors import ConfigError, ConformanceError, ParseError, ProtocolError
from .model import ParameterSet, TrainSpec, flatten, init_params, unflatten
from .orchestrator import ExperimentSpec, run_centralized, run_federated
from .partition import PartitionSpec, assign_sites, partition
from .privacy import PrivacySpec, epsilon_at, sigma_base, tensor_scales
from .secagg import SecAggSpec
from .strategies import StrategyConfig, fedavg_aggregate

__version__ = "0.1.0"
