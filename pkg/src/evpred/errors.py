"""Exception types shared across the toolkit.

Exit-code mapping used by the CLI: FormatError and bad arguments exit 2,
IntegrityError exits 3, TrainingDivergedError and failed checks exit 4.
"""


class FormatError(ValueError):
    """A file does not conform to its declared text format."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class IntegrityError(RuntimeError):
    """Cross-file consistency violated (hashes, duplicate inventory entries)."""


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite during training."""
