# Point-level normalization forecasting lab
from .main import run_experiment, main
from .config import ExperimentConfig, load_config, LOOKBACK_PRESET
from .dataset import SeriesFrame, load_csv, make_split, fit_standardizer, apply_standardizer, windows, prepare
from .synthgen import SynthConfig, gen_piecewise
from .normalizers import build_normalizer, param_count, allocated_param_count, NORMALIZER_METHODS
from .backbones import build_backbone, BackboneParams, backbone_forward, BACKBONE_KINDS
from .engine import Pipeline, TrainConfig, forward, backward, grad_check, adam_step, train
from .metrics import MetricPair, metrics, improvement, MethodComparison
from .stationarity import adf_stat, schwert_lag
from .report import RunReport
from .run_logging import get_logger

__all__ = [
    'run_experiment',
    'main',
    'ExperimentConfig',
    'load_config',
    'LOOKBACK_PRESET',
    'SeriesFrame',
    'load_csv',
    'make_split',
    'fit_standardizer',
    'apply_standardizer',
    'windows',
    'prepare',
    'SynthConfig',
    'gen_piecewise',
    'build_normalizer',
    'param_count',
    'allocated_param_count',
    'NORMALIZER_METHODS',
    'build_backbone',
    'BackboneParams',
    'backbone_forward',
    'BACKBONE_KINDS',
    'Pipeline',
    'TrainConfig',
    'forward',
    'backward',
    'grad_check',
    'adam_step',
    'train',
    'MetricPair',
    'metrics',
    'improvement',
    'MethodComparison',
    'adf_stat',
    'schwert_lag',
    'RunReport',
    'get_logger',
]
