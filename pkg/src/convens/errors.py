"""Exception types shared across the package, mapped to CLI exit codes."""


class ConfigError(Exception):
    """Invalid configuration: bad flag combination, malformed config file."""


class DataError(Exception):
    """Invalid input data: malformed CSV, dimension mismatch, too-short series."""


class DivergenceError(Exception):
    """Training produced a non-finite loss."""

    def __init__(self, model_index: int, epoch: int, loss_value: float):
        self.model_index = model_index
        self.epoch = epoch
        self.loss_value = loss_value
        super().__init__(
            f"non-finite loss {loss_value!r} while training model "
            f"{model_index} (epoch {epoch})"
        )
