from .estimator import MealCNNClassifier
from .gradcheck import GradCheckResult, check_gradients, smooth_check_point
from .io import load_model, model_from_bytes, model_to_bytes, save_model
from .model import Architecture, CnnModel, backward, forward, intermediate_shapes, loss, predict
from .train import TrainConfig, TrainReport, fit_model, stratified_split, train

__all__ = [
    "Architecture", "CnnModel", "GradCheckResult", "MealCNNClassifier", "TrainConfig",
    "TrainReport", "backward", "check_gradients", "fit_model", "forward", "intermediate_shapes",
    "load_model", "loss", "model_from_bytes", "model_to_bytes", "predict", "save_model",
    "smooth_check_point", "stratified_split", "train",
]
