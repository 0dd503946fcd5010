"""Exception taxonomy shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class DegenerateInputError(ValueError):
    """Input is valid in shape but degenerate in value (zero vector, empty text)."""


class DatasetError(ValueError):
    """A task bundle violates a dataset invariant (empty class, bad label)."""


class SuiteFormatError(ValueError):
    """An interchange file is malformed. ``code`` identifies the failure."""

    def __init__(self, code, message):
        super().__init__(f"[{code}] {message}")
        self.code = code


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimization."""
