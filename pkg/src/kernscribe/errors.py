"""Exception hierarchy shared across the toolkit."""


class KernScribeError(Exception):
    """Base class for all toolkit errors."""


class ParseError(KernScribeError):
    """Structural error in **Kern input (bad spine counts, unknown token class)."""

    def __init__(self, message, line=None, expected=None, found=None):
        self.line = line
        self.expected = expected
        self.found = found
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SemanticError(KernScribeError):
    """Input parsed structurally but is musically inconsistent."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VocabularyError(KernScribeError):
    """Symbol outside a closed vocabulary (time signatures, token ids, ...)."""


class TokenizeError(KernScribeError):
    """Score content not representable in the token vocabulary."""


class DecodeError(KernScribeError):
    """Token sequence violates the serialization grammar."""

    def __init__(self, message, position=None, reason=None):
        self.position = position
        self.reason = reason or message
        if position is not None:
            message = f"position {position}: {message}"
        super().__init__(message)


class UnsupportedVoicingError(KernScribeError):
    """More voices in a bar than the normalized form supports."""

    def __init__(self, message, bar_index=None):
        self.bar_index = bar_index
        super().__init__(message)


class TranspositionError(KernScribeError):
    """Key shift would push a pitch outside the piano range."""


class ConfigError(KernScribeError):
    """Invalid augmentation/model configuration."""


class AudioFormatError(KernScribeError):
    """Audio input violates the fixed format contract (16 kHz mono WAV)."""


class NumericsError(KernScribeError):
    """Non-finite values where finite math is required."""


class CheckpointError(KernScribeError):
    """Checkpoint container is unreadable or inconsistent with the vocabulary."""


class InputError(KernScribeError):
    """Mismatched evaluation inputs (lengths, bar counts)."""
