"""Training-set augmentation math: key shifts, tempo scaling, plan building.

Expressive-performance rendering and soundfont synthesis are external: the
plan only draws variant parameters; the CLI writes a synthesis job file for
an outside renderer.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .errors import ConfigError, TranspositionError
from .score import (
    Bar,
    KEY_SHARPS_MAX,
    KEY_SHARPS_MIN,
    KeySignature,
    MIDI_MAX,
    MIDI_MIN,
    Note,
    NoteEvent,
    Pitch,
    Score,
    Staff,
    Voice,
)

SEMITONE_MIN = -4
SEMITONE_MAX = 4
TEMPO_MIN = 0.85
TEMPO_MAX = 1.15
VARIANTS_PER_CLIP = 10

# Opaque ids handed to the external rendering hook.
DEFAULT_COMPOSERS = (
    "score", "Bach", "Balakirev", "Beethoven", "Brahms", "Debussy", "Glinka",
    "Haydn", "Liszt", "Prokofiev", "Rachmaninoff", "Ravel", "Schubert",
    "Schumann", "Scriabin",
)
DEFAULT_SOUNDFONTS = (
    "TimGM6mb", "FluidR3_GM", "UprightPianoKW", "SalamanderGrandPiano",
)


def map_key_sharps(sharps: int, k: int) -> int:
    """Key signature after a shift of k semitones, kept inside [-6, 7].

    Reduction is mod 12 on the sharps count (a semitone moves the signature
    by 7 positions on the circle of fifths).  Two pitch classes have two
    representatives in the window: {6, -6} keeps the source key's side (sign
    of k when the source is C major), and {7, -5} resolves to -5, the fewer-
    accidental spelling, so 7 sharps only survives identity shifts.
    """
    if not KEY_SHARPS_MIN <= sharps <= KEY_SHARPS_MAX:
        raise ValueError(f"key sharps {sharps} outside [-6, 7]")
    if k % 12 == 0:
        return sharps
    r = (sharps + 7 * k) % 12
    if r <= 5:
        return r
    if r == 6:
        if sharps > 0:
            return 6
        if sharps < 0:
            return -6
        return 6 if k > 0 else -6
    if r == 7:
        return -5
    return r - 12


def _transpose_pitch(pitch: Pitch, k: int, prefer_flats: bool) -> Pitch:
    midi = pitch.midi + k
    if not MIDI_MIN <= midi <= MIDI_MAX:
        raise TranspositionError(
            f"midi {pitch.midi}{k:+d} = {midi} leaves the piano range")
    return Pitch.from_midi(midi, prefer_flats=prefer_flats)


def transpose(score: Score, k: int) -> Score:
    """Shift every pitch by k semitones and remap the key signatures.

    Spelling follows the new key (flat keys spell flats); out-of-range
    results reject the clip rather than clamping.  k = 0 is the identity.
    """
    if not SEMITONE_MIN <= k <= SEMITONE_MAX:
        raise ValueError(f"shift {k} outside {SEMITONE_MIN}..{SEMITONE_MAX}")
    if k == 0:
        return score
    new_keys = tuple(KeySignature(map_key_sharps(key.sharps, k))
                     for key in score.per_bar_key)
    staffs = {}
    for name in ("lower", "upper"):
        bars = []
        for b, bar in enumerate(score.staff(name).bars):
            prefer_flats = new_keys[b].sharps < 0
            voices = []
            for voice in bar.voices:
                events = []
                for e in voice.events:
                    notes = tuple(
                        Note(None if n.pitch is None
                             else _transpose_pitch(n.pitch, k, prefer_flats),
                             n.tie, n.marks)
                        for n in e.notes)
                    events.append(NoteEvent(e.onset, e.duration, notes, grace=e.grace))
                voices.append(Voice(tuple(events)))
            bars.append(Bar(tuple(voices)))
        staffs[name] = Staff(tuple(bars))
    return Score(staffs["lower"], staffs["upper"], new_keys, score.per_bar_time)


def tempo_scale(events: list[tuple[float, float]], factor: float) -> list[tuple[float, float]]:
    """Scale performance (onset, offset) second pairs; factor > 1 is faster.

    Notated score durations are untouched; this applies to rendered timing
    only.
    """
    if not TEMPO_MIN <= factor <= TEMPO_MAX:
        raise ValueError(f"tempo factor {factor} outside {TEMPO_MIN}..{TEMPO_MAX}")
    return [(onset / factor, offset / factor) for onset, offset in events]


@dataclass(frozen=True)
class AugmentConfig:
    composers: tuple[str, ...] = DEFAULT_COMPOSERS
    soundfonts: tuple[str, ...] = DEFAULT_SOUNDFONTS
    variants_per_clip: int = VARIANTS_PER_CLIP
    semitone_min: int = SEMITONE_MIN
    semitone_max: int = SEMITONE_MAX
    tempo_min: float = TEMPO_MIN
    tempo_max: float = TEMPO_MAX

    def __post_init__(self):
        if not self.composers:
            raise ConfigError("composer list is empty")
        if not self.soundfonts:
            raise ConfigError("soundfont list is empty")
        if self.variants_per_clip < 1:
            raise ConfigError("variants_per_clip must be positive")

    @classmethod
    def from_payload(cls, payload: dict) -> "AugmentConfig":
        kwargs = {}
        for key in ("composers", "soundfonts"):
            if key in payload:
                kwargs[key] = tuple(payload[key])
        for key in ("variants_per_clip", "semitone_min", "semitone_max",
                    "tempo_min", "tempo_max"):
            if key in payload:
                kwargs[key] = payload[key]
        return cls(**kwargs)


@dataclass(frozen=True)
class ClipVariant:
    clip_id: str
    variant_index: int
    semitone_shift: int
    tempo_factor: float
    composer_id: str
    soundfont_id: str
    rng_seed: int

    def as_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "variant_index": self.variant_index,
            "semitone_shift": self.semitone_shift,
            "tempo_factor": self.tempo_factor,
            "composer_id": self.composer_id,
            "soundfont_id": self.soundfont_id,
            "rng_seed": self.rng_seed,
        }


@dataclass(frozen=True)
class AugmentPlan:
    seed: int
    variants: tuple[ClipVariant, ...]

    def for_clip(self, clip_id: str) -> list[ClipVariant]:
        return [v for v in self.variants if v.clip_id == clip_id]


def build_plan(clip_ids: list[str], config: AugmentConfig, seed: int) -> AugmentPlan:
    """Draw the variant table: deterministic in seed, uniform in each range."""
    rng = random.Random(seed)
    variants = []
    for clip_id in clip_ids:
        for v in range(config.variants_per_clip):
            variants.append(ClipVariant(
                clip_id=clip_id,
                variant_index=v,
                semitone_shift=rng.randint(config.semitone_min, config.semitone_max),
                tempo_factor=round(rng.uniform(config.tempo_min, config.tempo_max), 6),
                composer_id=rng.choice(config.composers),
                soundfont_id=rng.choice(config.soundfonts),
                rng_seed=rng.randrange(2**31),
            ))
    return AugmentPlan(seed=seed, variants=tuple(variants))
