# errors.py
class PvcError(Exception):
    """Error base del paquete."""


class ShapeError(PvcError, ValueError):
    pass


class NonFiniteError(PvcError, ArithmeticError):
    pass


class ConfigError(PvcError, ValueError):
    pass


class PvctFormatError(PvcError, IOError):
    pass


class CheckFailure(PvcError):
    """Una verificación no pasó; lleva el reporte que la describe."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
