"""
Exception hierarchy shared by every module.
Each class carries the exit code the command line reports for it.
"""
from typing import Iterable, Optional


class FedEmbedError(Exception):
    exit_code = 1


class ConfigError(FedEmbedError):
    exit_code = 2


class ParseError(ConfigError):
    """Malformed line in a JSONL file"""

    def __init__(self, path: str, line_no: int, detail: str):
        super().__init__(f"{path}:{line_no}: {detail}")
        self.path = path
        self.line_no = line_no


class SchemaError(ConfigError):
    """Record is valid JSON but lacks a field or has the wrong type"""

    def __init__(self, path: str, line_no: int, field: str, detail: str = "missing field"):
        super().__init__(f"{path}:{line_no}: {detail} '{field}'")
        self.path = path
        self.line_no = line_no
        self.field = field


class DataIOError(FedEmbedError):
    exit_code = 3


class NumericError(FedEmbedError):
    exit_code = 4

    def __init__(self, message: str, round_index: Optional[int] = None,
                 client_id: Optional[int] = None):
        context = []
        if round_index is not None:
            context.append(f"round {round_index}")
        if client_id is not None:
            context.append(f"client {client_id}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)
        self.round_index = round_index
        self.client_id = client_id


class DimensionError(NumericError):
    pass


class DegenerateInputError(NumericError):
    pass


class CryptoError(FedEmbedError):
    exit_code = 4


class EncodingOverflowError(CryptoError):

    def __init__(self, index: int, value: float, bound: float):
        super().__init__(f"component {index} = {value!r} exceeds encodable bound {bound!r}")
        self.index = index


class DataIntegrityError(FedEmbedError):
    exit_code = 5

    def __init__(self, message: str, ids: Iterable[str] = ()):
        self.ids = sorted(set(ids))
        if self.ids:
            message = f"{message}: {', '.join(self.ids)}"
        super().__init__(message)
