"""Exception hierarchy. The CLI maps each family to an exit status."""


class VcpcfgError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


class ConfigError(VcpcfgError):
    """Invalid, unknown or missing configuration values."""

    exit_code = 2


class DataError(VcpcfgError):
    """Malformed or inconsistent input files."""

    exit_code = 3


class NoParseError(DataError):
    """A sentence is too short to have a CNF parse."""


class NumericError(VcpcfgError):
    """Non-finite values in logits, losses or gradients."""

    exit_code = 4


class ContractError(VcpcfgError):
    """A caller broke an engine precondition (shapes, tapes, scalars)."""

    exit_code = 4


class EnumerationLimitError(ContractError):
    """Exhaustive tree enumeration was asked for a sentence that is too long."""
