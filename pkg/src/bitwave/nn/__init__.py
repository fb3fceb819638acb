"""MLP with quantization-aware training and bit-plane inference."""

from .io import ModelFormatError, load_model, model_from_bytes, model_to_bytes, save_model
from .model import (
    ALLOWED_BITS,
    FULL_PRECISION,
    CalibrationError,
    CostEstimate,
    ForwardResult,
    Model,
    ModelError,
    ModelSpec,
    calibrate_activations,
    forward,
    init_model,
    model_cost,
    sigmoid,
)
from .train import Hyper, TrainingError, backward, evaluate_loss, gradient_check, squared_error, train
from .task import predict, fit_task
