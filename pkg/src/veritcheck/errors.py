"""Exception hierarchy shared by every stage of the pipeline."""


class VeritCheckError(Exception):
    """Base class; optionally carries a source position or step index."""

    def __init__(self, message, line=None, column=None, step=None):
        self.message = message
        self.line = line
        self.column = column
        self.step = step
        super().__init__(str(self))

    def __str__(self):
        where = ""
        if self.line is not None:
            where = f" at {self.line}:{self.column if self.column is not None else 0}"
        elif self.step is not None:
            where = f" at step {self.step}"
        return f"{self.message}{where}"


class LexError(VeritCheckError):
    """Illegal character or unterminated token in the input text."""


class ParseError(VeritCheckError):
    """Input does not match the proof grammar."""


class NameResolutionError(VeritCheckError):
    """A :named annotation is missing, duplicated or cyclic."""


class DefineError(VeritCheckError):
    """A define-fun is recursive or malformed."""


class SortError(VeritCheckError):
    """A term cannot be given a consistent sort."""


class StructureError(VeritCheckError):
    """The step DAG violates the structural rules (premises, anchors)."""


class NonlinearError(VeritCheckError):
    """An arithmetic atom contains a product of non-constant terms."""
