"""Exception hierarchy shared by all zoolab modules."""


class ZooLabError(Exception):
    """Base class for every error raised by zoolab."""


class SelectorEmpty(ZooLabError, ValueError):
    pass


class DimensionMismatch(ZooLabError, ValueError):
    pass


class CheckpointFormatError(ZooLabError):
    """Base class for unreadable checkpoint files."""


class CorruptHeader(CheckpointFormatError):
    pass


class TruncatedBlob(CheckpointFormatError):
    pass


class ShapeSizeMismatch(CheckpointFormatError):
    pass


class InvalidSpec(ZooLabError, ValueError):
    pass


class InvalidLabel(ZooLabError, ValueError):
    pass


class DegenerateEmbedding(ZooLabError, ValueError):
    pass


class DivergedTraining(ZooLabError, RuntimeError):
    """Training produced a non-finite loss.

    ``trajectory`` holds the checkpoints and metrics recorded before the
    failing epoch so callers can persist the partial run.
    """

    def __init__(self, epoch, trajectory=None):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.trajectory = trajectory


class InvalidGrid(ZooLabError, ValueError):
    pass


class DegenerateDistribution(ZooLabError, ValueError):
    pass


class InvalidK(ZooLabError, ValueError):
    pass


class ClusterTooSmall(ZooLabError, ValueError):
    pass


class WindowTooLarge(ZooLabError, ValueError):
    pass


class ArchMismatch(ZooLabError, ValueError):
    pass


class MalformedZoo(ZooLabError):
    def __init__(self, message, path=None):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path
