"""Typed errors raised across the toolkit."""


class SpokenLMError(Exception):
    """Base class for every error the toolkit raises on purpose."""


class FormatError(SpokenLMError):
    """A file does not carry the expected magic or version."""


class CorruptionError(SpokenLMError):
    """A file is truncated or its payload does not match its header."""


class ValidationError(SpokenLMError, ValueError):
    """A value violates a domain invariant."""


class ConfigError(ValidationError):
    """A configuration key is missing, unknown or incompatible."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class InfeasibleConfigError(ConfigError):
    """The requested corpus cannot be generated from the given sizes."""


class TrainingDiverged(SpokenLMError):
    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")


class NonFiniteError(SpokenLMError):
    def __init__(self, layer):
        self.layer = layer
        super().__init__(f"non-finite activation at layer {layer}")
