"""Exception types shared across the package.

The CLI maps these onto its exit codes: usage-ish problems exit 2,
:class:`NumericalError` exits 3, compatibility problems exit 4.
"""


class LswError(Exception):
    pass


class ShapeError(LswError, ValueError):
    pass


class CorpusError(LswError):
    pass


class NumericalError(LswError):
    """Training produced a non-finite loss."""

    def __init__(self, message, batch_ids=(), param_norms=None):
        super().__init__(message)
        self.batch_ids = list(batch_ids)
        self.param_norms = dict(param_norms or {})


class CompatibilityError(LswError):
    pass


class CheckpointError(CompatibilityError):
    pass


class NoSectionWeightsError(CompatibilityError):
    def __init__(self, message="model has no section weights"):
        super().__init__(message)
