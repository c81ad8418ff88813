"""Exception hierarchy shared by all facelab packages."""


class FacelabError(Exception):
    """Base class for every error raised on purpose by facelab."""


class ConfigurationError(FacelabError, ValueError):
    """Invalid configuration, model spec or command-line flag."""


class ContractViolation(FacelabError, ValueError):
    """A caller broke an operation's precondition (shapes, empty inputs, ...)."""


class NumericalError(FacelabError, RuntimeError):
    """A loss or parameter became NaN/inf."""


class FittingDivergedError(NumericalError):
    """Template fitting stopped improving for too long."""


class DatasetIOError(FacelabError, OSError):
    """A dataset file is missing, unreadable or unwritable."""

    def __init__(self, message: str, sample_id: str = "") -> None:
        super().__init__(message)
        self.sample_id = sample_id
