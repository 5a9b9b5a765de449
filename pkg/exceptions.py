from typing import List, Optional


class AFedError(Exception):
    """Error base del simulador. `detail` cumple el papel de HTTPException.detail."""

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ShapeError(AFedError, ValueError):
    """Dimensiones incompatibles entre tensores, redes o bundles."""


class DataError(AFedError, ValueError):
    """Datos de entrada inválidos (pool vacío, covarianza degenerada, ...)."""


class SchemaError(DataError):
    """El CSV no respeta el esquema declarado (columna faltante, celda ilegible)."""

    def __init__(self, detail: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(detail)
        self.row = row
        self.column = column


class EmptyGroupError(AFedError, ValueError):
    """Uno de los grupos sensibles no tiene muestras; ΔDP no está definido."""


class ProbeCapacityError(AFedError, ValueError):
    """Capacidad inválida para el clasificador sonda de la divergencia."""


class ConfigError(AFedError):
    """Configuración de experimento inválida. Cada error nombra la clave culpable."""

    def __init__(self, errors: List[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class NumericalError(AFedError, ArithmeticError):
    """Se detectó NaN/Inf durante el entrenamiento."""

    def __init__(self, detail: str, round_index: int):
        super().__init__(detail)
        self.round_index = round_index
