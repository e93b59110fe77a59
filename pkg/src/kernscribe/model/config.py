"""Model and training-schedule configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    note_vocab: int
    time_vocab: int = 7
    key_vocab: int = 14
    d: int = 64
    note_embed_dim: int = 32
    time_embed_dim: int = 8
    key_embed_dim: int = 8
    staff_summary_dim: int = 32
    bar_token_dim: int = 64
    conv_channels: tuple[int, int] = (8, 16)
    freq_bins: int = 480
    bars_per_clip: int = 5
    max_steps: int = 96
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("note_vocab", "time_vocab", "key_vocab", "d", "note_embed_dim",
                     "time_embed_dim", "key_embed_dim", "staff_summary_dim",
                     "bar_token_dim", "freq_bins", "bars_per_clip", "max_steps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.freq_bins % 16 != 0:
            raise ConfigError("freq_bins must be divisible by 16 (two 1x4 pools)")

    def to_payload(self) -> dict:
        payload = asdict(self)
        payload["conv_channels"] = list(self.conv_channels)
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "ModelConfig":
        payload = dict(payload)
        if "conv_channels" in payload:
            payload["conv_channels"] = tuple(payload["conv_channels"])
        return cls(**payload)


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 2
    grad_clip: float = 5.0
    pretrain_ratio: float = 0.7
    pretrain_decay: float = 0.99
    finetune_ratio: float = 0.6

    @classmethod
    def from_payload(cls, payload: dict) -> "TrainSchedule":
        return cls(**payload)

    def to_payload(self) -> dict:
        return asdict(self)


def teacher_forcing_ratio(stage: str, epoch: int, schedule: TrainSchedule) -> float:
    """Pretraining decays 0.7 * 0.99^epoch; fine-tuning stays at 0.6."""
    if stage == "pretrain":
        return schedule.pretrain_ratio * schedule.pretrain_decay**epoch
    if stage == "finetune":
        return schedule.finetune_ratio
    raise ConfigError(f"unknown stage {stage!r}")
