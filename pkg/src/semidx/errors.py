"""Error taxonomy shared by the library and the CLI.

Every operational failure raised by this package derives from EngineError
and carries the process exit code the CLI maps it to:

    2  usage / configuration errors
    3  data, format, and contract errors
    4  numeric, training, and mining errors
"""


class EngineError(Exception):
    exit_code = 3


class UsageError(EngineError):
    exit_code = 2


class FormatError(EngineError):
    """Malformed file: bad magic, truncation, duplicate keys, broken records."""


class ContractError(EngineError):
    """A documented precondition was violated (size mismatch, id out of range)."""


class BuildError(EngineError):
    """Index construction failed; message identifies the offending passage."""


class NumericError(EngineError):
    exit_code = 4


class TrainingError(NumericError):
    """Training diverged or hit a non-finite loss; message carries the epoch."""


class MinerError(NumericError):
    """Negative mining could not produce a passage that fails the answer test."""
