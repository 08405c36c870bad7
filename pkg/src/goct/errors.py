"""Exception types shared across the package."""


class GoctError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GoctError):
    """A domain object violates its invariants (bad tempo map, malformed chart, ...)."""


class ParseError(GoctError):
    """Syntax or semantic error in a text chart format, with source location."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f"line {line}"
            if column is not None:
                loc += f", column {column}"
            loc += ": "
        super().__init__(loc + message)


class ImportRejection(GoctError):
    """An input file is well-formed but not usable (wrong mode, wrong key count)."""

    def __init__(self, reason, message):
        self.reason = reason
        super().__init__(f"{reason}: {message}")


class FormatError(GoctError):
    """A binary file (features, model) has a bad magic, version, or structure."""


class GrammarError(GoctError):
    """A token stream violates the window grammar."""

    def __init__(self, message, window=None, position=None):
        self.window = window
        self.position = position
        loc = ""
        if window is not None:
            loc = f"window {window}"
            if position is not None:
                loc += f", token {position}"
            loc += ": "
        super().__init__(loc + message)


class TrainingDiverged(GoctError):
    """Training hit a non-finite loss; carries the batch id and gradient norms."""

    def __init__(self, message, batch_id=None, grad_norms=None):
        self.batch_id = batch_id
        self.grad_norms = grad_norms or {}
        super().__init__(message)
