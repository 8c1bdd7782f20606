"""Exception hierarchy shared by every subsystem."""


class FingerprintError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FingerprintError, ValueError):
    pass


class SignalTooShortError(FingerprintError, ValueError):
    pass


class ConfigError(FingerprintError, ValueError):
    pass


class ShapeError(FingerprintError, ValueError):
    """Raised by tensor ops; the message names the op and the offending dims."""


class StateError(FingerprintError, RuntimeError):
    pass


class UnsupportedFormatError(FingerprintError, ValueError):
    def __init__(self, field, value, expected):
        self.field = field
        self.value = value
        self.expected = expected
        super().__init__(f"unsupported {field}: got {value!r}, expected {expected!r}")


class NumericalError(FingerprintError, FloatingPointError):
    pass


class TrainingDivergedError(FingerprintError, RuntimeError):
    def __init__(self, step, epoch, loss):
        self.step = step
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at step {step} (epoch {epoch}): loss={loss}")


class MissingArtifactError(FingerprintError, FileNotFoundError):
    """An input artifact is absent; ``producer`` names the CLI command that creates it."""

    def __init__(self, path, producer):
        self.path = str(path)
        self.producer = producer
        super().__init__(f"missing artifact {self.path}; run `fpdetect {producer}` first")
