"""Desk-scale gradient-boosted low-rank adaptation engine and probe suite."""

from xgblora.boosting import (
    BoostConfig,
    BoosterTrace,
    ClassicGbModel,
    CostModel,
    classic_gb_fit,
    cost_model_estimate,
    full_finetune,
    lora_fit,
    select_layers,
    train_booster,
    xgblora_fit,
)
from xgblora.lora import (
    AdapterSet,
    LoraPair,
    effective_weight,
    init_adapter,
    init_adapter_set,
    merge_adapters,
    param_count,
)
from xgblora.lowrank import svd_topr
from xgblora.models import (
    Batch,
    Dataset,
    ModelSpec,
    Role,
    WeightId,
    accuracy,
    build_mlp,
    build_transformer,
    forward,
    list_adaptable_weights,
    loss_eval,
)
from xgblora.tasks import TeacherTask, gen_sequence_dataset, gen_teacher_dataset
from xgblora.tensor import Rng, Tensor, finite_diff_gradient, frobenius_norm, sgd_step

__all__ = [
    "AdapterSet",
    "Batch",
    "BoostConfig",
    "BoosterTrace",
    "ClassicGbModel",
    "CostModel",
    "Dataset",
    "LoraPair",
    "ModelSpec",
    "Rng",
    "Role",
    "TeacherTask",
    "Tensor",
    "WeightId",
    "accuracy",
    "build_mlp",
    "build_transformer",
    "classic_gb_fit",
    "cost_model_estimate",
    "effective_weight",
    "finite_diff_gradient",
    "forward",
    "frobenius_norm",
    "full_finetune",
    "gen_sequence_dataset",
    "gen_teacher_dataset",
    "init_adapter",
    "init_adapter_set",
    "list_adaptable_weights",
    "lora_fit",
    "loss_eval",
    "merge_adapters",
    "param_count",
    "select_layers",
    "sgd_step",
    "svd_topr",
    "train_booster",
    "xgblora_fit",
]
