from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .config import ModelConfig, TrainSchedule, teacher_forcing_ratio
from .gradcheck import GradCheckReport, grad_check, tiny_config
from .infer import Transcription, transcribe
from .net import (
    EOS_ID,
    PAD_ID,
    SOS_ID,
    STAFFS,
    AdditiveAttention,
    BatchTargets,
    ConvStack,
    DecodeResult,
    EncoderOutput,
    HierarchicalTranscriber,
    build_model,
)
from .training import (
    ClipExample,
    LossParts,
    TrainResult,
    TrainStepReport,
    collate,
    compute_losses,
    example_from_manifest_line,
    load_manifest,
    train,
)

__all__ = [
    "AdditiveAttention", "BatchTargets", "ClipExample", "ConvStack",
    "DecodeResult", "EncoderOutput", "EOS_ID", "GradCheckReport",
    "HierarchicalTranscriber", "LossParts", "ModelConfig", "PAD_ID", "SOS_ID",
    "STAFFS", "TrainResult", "TrainSchedule", "TrainStepReport",
    "Transcription", "build_model", "collate", "compute_losses",
    "example_from_manifest_line", "grad_check", "load_checkpoint",
    "load_manifest", "read_header", "save_checkpoint", "teacher_forcing_ratio",
    "tiny_config", "train", "transcribe",
]
