"""Exception hierarchy shared across the pipeline."""


class EcgReconError(Exception):
    pass


class IngestionError(EcgReconError):
    """A record file is missing or unreadable."""


class SchemaError(EcgReconError):
    """A record lacks one of the 12 standard leads."""


class DataQualityError(EcgReconError):
    """Non-finite or otherwise unusable samples."""


class UnsupportedRateError(EcgReconError, ValueError):
    pass


class TooShortError(EcgReconError, ValueError):
    pass


class ConfigError(EcgReconError, ValueError):
    pass


class ShapeError(EcgReconError, ValueError):
    pass


class TrainingDivergedError(EcgReconError, FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class CheckpointCorruptError(EcgReconError):
    pass


class CheckpointIncompatibleError(EcgReconError):
    pass


class MissingExperimentsError(EcgReconError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing experiments: " + ", ".join(self.missing))
