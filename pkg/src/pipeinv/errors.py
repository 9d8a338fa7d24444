class PipeinvError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PipeinvError, ValueError):
    pass


class ConfigError(PipeinvError, ValueError):
    """Invalid configuration; ``field`` holds the dotted path of the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class StratificationError(PipeinvError, ValueError):
    pass


class PairingError(PipeinvError, ValueError):
    pass


class CorpusNotFoundError(PipeinvError, FileNotFoundError):
    pass


class SpecError(PipeinvError, ValueError):
    def __init__(self, layer_index: int | None, message: str):
        self.layer_index = layer_index
        where = f"layer {layer_index}: " if layer_index is not None else ""
        super().__init__(where + message)


class TrainingDivergedError(PipeinvError, RuntimeError):
    def __init__(self, message: str, snapshot_path=None):
        self.snapshot_path = snapshot_path
        super().__init__(message)


class CKAError(PipeinvError, ValueError):
    pass
