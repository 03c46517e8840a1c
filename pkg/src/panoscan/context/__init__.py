from .history import CausalContext, HistoryWindow, build_history, project_window
from .network import MaskedLinear, ModelConfig, ScanpathModel, causal_mask, to_gmm_params
from .providers import FeatureProvider, PooledLuminanceProvider, get_provider
from .train import TrainConfig, TrainingError, WindowData, evaluate_bits, predict_params, scanpath_windows, train

__all__ = [
    "CausalContext", "HistoryWindow", "build_history", "project_window",
    "MaskedLinear", "ModelConfig", "ScanpathModel", "causal_mask", "to_gmm_params",
    "FeatureProvider", "PooledLuminanceProvider", "get_provider",
    "TrainConfig", "TrainingError", "WindowData", "evaluate_bits", "predict_params",
    "scanpath_windows", "train",
]
