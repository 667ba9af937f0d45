class FuzzerError(Exception):
    """Base class for all errors raised by the fuzzer"""


class ClockError(FuzzerError):
    """Timestamp conversion outside a clock's validity"""


class ClockAnnouncementError(FuzzerError):
    """A node announced its clock twice within one boot"""


class BatchError(FuzzerError):
    """Malformed, duplicate or out-of-epoch batch"""


class TimelineError(FuzzerError):
    """Timeline invariant violated (missing send, cycle, corrupted history)"""


class AbstractionError(FuzzerError):
    """Abstraction fold received a graph that is not a valid extension"""


class SignatureMismatchError(FuzzerError):
    """Signatures built with different k or hash seed were compared"""


class CalibrationError(FuzzerError):
    """Not enough steady summaries to calibrate the threshold"""


class FaultError(FuzzerError):
    """Fault outside the enabled alphabet or addressing an unknown node"""


class PolicyError(FuzzerError):
    """Q-table hyper-parameters or values out of range"""


class ConfigError(FuzzerError):
    """Invalid campaign configuration"""

    def __init__(self, message: str, key: str = None):
        super().__init__(message)
        self.key = key


class ReplayDivergenceError(FuzzerError):
    """A replayed campaign diverged from its recording"""

    def __init__(self, message: str, step: int = None, detail: str = None):
        super().__init__(message)
        self.step = step
        self.detail = detail


class VersionMismatchError(FuzzerError):
    """Recorded campaign was produced by another tool version"""


class CheckpointError(FuzzerError):
    """Checkpoint missing or written with an unsupported format"""
