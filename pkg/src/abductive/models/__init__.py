from .baselines import FrequencyPrior, RuleBasedModel, rule_fit, rule_predict
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import Mode
from .networks import (
    MODEL_KINDS,
    NEURAL_KINDS,
    AbductionModel,
    DataDims,
    ModelConfig,
    build_model,
    expected_param_count,
)

__all__ = [
    "AbductionModel",
    "CheckpointError",
    "DataDims",
    "FrequencyPrior",
    "MODEL_KINDS",
    "Mode",
    "ModelConfig",
    "NEURAL_KINDS",
    "RuleBasedModel",
    "build_model",
    "expected_param_count",
    "load_checkpoint",
    "rule_fit",
    "rule_predict",
    "save_checkpoint",
]
