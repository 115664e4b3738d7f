"""Traffic predictors: from-scratch recurrent and convolutional networks plus an ARIMA baseline."""
from .arima import ArimaModel, ArimaPredictor, arima_fit, arima_forecast, forecast_prefixes, select_order
from .estimators import (
    GRUPredictor,
    LSTMPredictor,
    RNNPredictor,
    TCNPredictor,
    TrainedModel,
    make_estimator,
    measure_inference_time,
    predict,
    train,
)
from .network import Batch, Network
from .optim import AdamMoments, TrainConfig, adam_step
from .params import ModelParams
from .serialize import load_model, read_loss_curve, save_model, write_loss_curve
from .spec import (
    ALL_KINDS,
    NEURAL_KINDS,
    RECURRENT_KINDS,
    ModelSpec,
    complexity_budget,
    complexity_class,
    count_params,
    model_size_bytes,
)

__all__ = [
    "ModelSpec", "ModelParams", "TrainConfig", "AdamMoments", "adam_step",
    "Network", "Batch", "TrainedModel",
    "RNNPredictor", "LSTMPredictor", "GRUPredictor", "TCNPredictor", "ArimaPredictor",
    "ArimaModel", "arima_fit", "arima_forecast", "forecast_prefixes", "select_order",
    "make_estimator", "train", "predict", "measure_inference_time",
    "count_params", "complexity_class", "complexity_budget", "model_size_bytes",
    "save_model", "load_model", "write_loss_curve", "read_loss_curve",
    "ALL_KINDS", "NEURAL_KINDS", "RECURRENT_KINDS",
]
