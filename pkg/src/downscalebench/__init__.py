"""Climate-downscaling workbench: numpy models, data pipeline, transfer protocols."""

from .data import DatasetManifest, PairSet, Region, compute_norm_stats, load_manifest, load_pairs
from .errors import DownscaleError, ProtocolError
from .grid import NormStats, avg_pool, bicubic_upsample, denormalize, normalize
from .metrics import Bicubic, evaluate_model, mse, r2
from .models import ArchitectureSpec, Model, build
from .optim import TrainingConfig, fine_tune, train
from .protocol import MetricsReport, ProtocolSpec, load_protocol, run_protocol
from .synth import synth_dataset

__version__ = "0.1.0"
