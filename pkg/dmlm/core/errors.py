"""Exception hierarchy shared by every module; exit codes are read by the entry point."""
from typing import Optional


class DMLMError(Exception):
    """Base class. `exit_code` follows the CLI contract: 2 input, 3 contract, 1 internal."""
    exit_code = 1


# --- input errors (exit 2) ---

class InputError(DMLMError):
    exit_code = 2


class MalformedLine(InputError):
    def __init__(self, message: str, sentence_index: int, line_number: int, path: Optional[str] = None):
        self.sentence_index = sentence_index
        self.line_number = line_number
        self.path = path
        where = f"{path}:" if path else "line "
        super().__init__(f"{where}{line_number} (sentence {sentence_index}): {message}")


class InvalidTree(InputError):
    def __init__(self, message: str, sentence_index: int, line_number: int = 0, path: Optional[str] = None):
        self.sentence_index = sentence_index
        self.line_number = line_number
        self.path = path
        where = f"{path}:{line_number} " if path else ""
        super().__init__(f"{where}invalid tree in sentence {sentence_index}: {message}")


class EmptyCorpus(InputError):
    pass


class IoError(InputError):
    pass


class VersionMismatch(InputError):
    pass


class ChecksumMismatch(InputError):
    pass


class IdOutOfRange(InputError):
    pass


class EmptyBatch(InputError):
    pass


class EmptySamples(InputError):
    pass


class InsufficientSamples(InputError):
    pass


class NoNgrams(InputError):
    pass


class TooFewSamples(InputError):
    pass


class LengthMismatch(InputError):
    pass


class ConfigError(InputError):
    pass


# --- contract violations (exit 3) ---

class PhaseOrderViolation(DMLMError):
    exit_code = 3


# --- numerical / internal (exit 1) ---

class ShapeMismatch(DMLMError):
    pass


class NonScalarLoss(DMLMError):
    pass


class NonDeterministicFunction(DMLMError):
    pass


class NonFiniteLoss(DMLMError):
    pass


class DegenerateDistribution(DMLMError):
    pass


class EmptyBuffer(DMLMError):
    pass
