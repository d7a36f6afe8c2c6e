"""Text-guided multimodal video anomaly detection.

Subpackages and modules:

* ``autodiff``, ``nn``, ``gradcheck``: a small reverse-mode autodiff engine on numpy.
* ``encoders``: unimodal Transformer encoders.
* ``msbt``: multi-scale bottleneck fusion across modality pairs.
* ``detection``: the detector, top-K MIL objective, training and score blending.
* ``msta``: LLM-driven caption augmentation and the text anomaly head.
* ``io``, ``synth``, ``config``, ``workflow``, ``experiments``, ``cli``: files, data and orchestration.
"""

from .config import RunConfig, reference_config
from .detection import AnomalyDetector, ModelConfig, TrainConfig, VideoRecord, blend_scores, mil_loss, topk_mean, train
from .errors import TgvadError
from .metrics import expand_to_frames, frame_ap, frame_auc
from .msbt import MSBT, MsbtConfig, halving_schedule

__version__ = "0.1.0"

__all__ = [
    "AnomalyDetector",
    "MSBT",
    "ModelConfig",
    "MsbtConfig",
    "RunConfig",
    "TgvadError",
    "TrainConfig",
    "VideoRecord",
    "blend_scores",
    "expand_to_frames",
    "frame_ap",
    "frame_auc",
    "halving_schedule",
    "mil_loss",
    "reference_config",
    "topk_mean",
    "train",
]
