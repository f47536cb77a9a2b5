"""Exception types shared across the toolkit."""


class InvalidArgumentError(ValueError):
    """An argument is outside the domain of the operation."""


class ParseError(ValueError):
    """A sweep or GPS log does not conform to its CSV schema."""

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ":".join(where[:1]) + (", " + ", ".join(where[1:]) if len(where) > 1 else "")
        super().__init__(f"{prefix}: {message}" if prefix else message)


class FitDegenerateError(RuntimeError):
    """The data cannot constrain the requested fit parameters."""


class NotFoundError(LookupError):
    """A station or site name is not known."""

    def __str__(self):
        # LookupError subclasses render args with repr() otherwise
        return str(self.args[0]) if self.args else ""
