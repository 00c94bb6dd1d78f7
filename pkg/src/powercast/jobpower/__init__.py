"""Job-level power models (first layer of the prediction)."""

from .eam import EnhancedAverageModel, eam_fit, eam_predict
from .models import (
    MAGIC,
    MIN_SVR_JOBS,
    MIN_SVR_POINTS,
    KernelSpec,
    SvrJobModel,
    TrainingPoint,
    UserModel,
    UserTrainingData,
    Variant,
    collect_training_data,
    default_candidates,
    fit_user_model,
    global_eam_fit,
    load_user_model,
    partition_training,
    predict_job_array,
    predict_job_series,
    save_user_model,
    select_variant,
    svr_fit,
    svr_predict,
    tune_hyperparams,
)
from .svr import EpsilonSVR

__all__ = [
    "EnhancedAverageModel", "EpsilonSVR", "KernelSpec", "MAGIC", "MIN_SVR_JOBS",
    "MIN_SVR_POINTS", "SvrJobModel", "TrainingPoint", "UserModel", "UserTrainingData",
    "Variant", "collect_training_data", "default_candidates", "eam_fit", "eam_predict",
    "fit_user_model", "global_eam_fit", "load_user_model", "partition_training",
    "predict_job_array", "predict_job_series", "save_user_model", "select_variant",
    "svr_fit", "svr_predict", "tune_hyperparams",
]
