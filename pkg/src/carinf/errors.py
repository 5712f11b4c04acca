"""Exception hierarchy.

``ConfigError`` subclasses signal a bad setup (CLI exit code 2); ``DataError``
subclasses signal a problem with the observations themselves (exit code 3).
"""


class CarInfError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 3


class ConfigError(CarInfError):
    """Invalid configuration or invalid arguments."""

    exit_code = 2


class ConfigMismatch(ConfigError):
    """A stratum key does not match the randomizer configuration."""


class DataError(CarInfError):
    """Observed data cannot support the requested computation."""


class IncompleteRecord(DataError):
    """A subject used for estimation lacks an arm or an outcome."""


class EmptyCell(DataError):
    """A stratum has no subjects in an arm that the contrast needs.

    Attributes
    ----------
    cells : list of (arm, stratum) pairs that are empty.
    """

    def __init__(self, cells, message=None):
        self.cells = list(cells)
        if message is None:
            shown = ", ".join(f"arm {t} / stratum {z}" for t, z in self.cells)
            message = f"empty stratum-arm cell(s): {shown}"
        super().__init__(message)


class InsufficientCell(DataError):
    """A stratum-arm cell has too few subjects for the requested quantity."""

    def __init__(self, arm, stratum, count, needed, what="estimation"):
        self.arm = arm
        self.stratum = stratum
        self.count = count
        self.needed = needed
        where = f"stratum {stratum}" if arm is None else f"arm {arm} / stratum {stratum}"
        super().__init__(
            f"{where} has {count} subject(s); {what} needs at least {needed}"
        )


class SingularGram(DataError):
    """The covariate cross-product matrix of a cell is (numerically) singular."""
