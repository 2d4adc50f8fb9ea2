"""Exception types shared across the package."""


class SheafKGError(Exception):
    """Base class for all errors raised by sheaf_kg."""


class TripleParseError(SheafKGError):
    """A triple file line could not be parsed."""

    def __init__(self, path, line_number, message):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = path
        self.line_number = line_number


class SchemaError(SheafKGError):
    """Schema is malformed or a referenced type/relation is missing."""


class ValidationError(SheafKGError):
    """Data violates a structural invariant (e.g. type consistency)."""


class ShapeError(SheafKGError):
    """A cochain or matrix does not conform to the expected stalk dimensions."""


class ConfigError(SheafKGError):
    """Invalid model or training configuration."""


class QueryError(SheafKGError):
    """A query is malformed or cannot be grounded in the schema/vocabulary."""


class SamplingError(SheafKGError):
    """Negative sampling cannot produce a corrupted triple."""


class EvaluationError(SheafKGError):
    """Ranking metrics requested on invalid input."""


class CheckpointError(SheafKGError):
    """Checkpoint files are missing, truncated, or inconsistent."""


class BudgetExceededError(SheafKGError):
    """An exhaustive computation would exceed its configured budget."""


class TrainingAbortError(SheafKGError):
    """Training stopped because the loss became non-finite."""

    def __init__(self, epoch, batch, relation, message=""):
        detail = f"non-finite loss at epoch {epoch}, batch {batch}, relation {relation!r}"
        if message:
            detail = f"{detail}: {message}"
        super().__init__(detail)
        self.epoch = epoch
        self.batch = batch
        self.relation = relation
