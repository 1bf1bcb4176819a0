"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes of two operands do not agree; message names both shapes."""


class ConsistencyError(ValueError):
    """Two structures that must describe the same set of things do not."""


class WorldGenerationError(RuntimeError):
    """World generation exhausted its retry budget."""


class WorldUnsuitableError(RuntimeError):
    """Episode sampling exhausted its budget on this world."""


class SequencingError(RuntimeError):
    """An episode-lifecycle call arrived out of order."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; diagnostics in the message."""
