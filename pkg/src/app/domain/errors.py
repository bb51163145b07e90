class DeformableError(Exception):
    """Базовая ошибка пакета."""


class DimensionError(DeformableError, ValueError):
    pass


class ConfigurationError(DeformableError, ValueError):
    pass


class NumericError(DeformableError, ArithmeticError):
    pass


class DataError(DeformableError, ValueError):
    pass


class ResizeRequiredError(DataError):
    pass


class DegenerateFactorError(DataError):
    pass


class CheckpointError(DeformableError, OSError):
    pass


class ChecksumMismatchError(CheckpointError):
    pass


class UnknownMagicError(CheckpointError):
    pass


class VersionSkewError(CheckpointError):
    pass


def shape_mismatch(what: str, expected, actual) -> DimensionError:
    return DimensionError(f"{what}: expected shape {tuple(expected)}, got {tuple(actual)}")
