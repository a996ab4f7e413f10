"""Exception hierarchy shared across the package."""


class ArmadaError(Exception):
    """Base class for every error raised by armada."""


class DimensionError(ArmadaError, ValueError):
    pass


class ParameterError(ArmadaError, ValueError):
    pass


class DataError(ArmadaError, ValueError):
    pass


class NumericError(ArmadaError, ArithmeticError):
    pass


class ContractError(ArmadaError, RuntimeError):
    pass


class FormatError(ArmadaError, ValueError):
    pass


class ConfigError(ArmadaError, ValueError):
    pass
