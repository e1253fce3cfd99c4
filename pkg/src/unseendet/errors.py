"""Exception hierarchy shared across the package.

``ValidationError`` and its subclasses signal bad input (CLI exit code 2);
everything else derived from ``UnseenDetError`` is a runtime failure (exit 3).
"""


class UnseenDetError(Exception):
    pass


class ValidationError(UnseenDetError, ValueError):
    pass


class ParseError(ValidationError):
    pass


class UnknownNameError(ValidationError, KeyError):
    def __init__(self, name, suggestions=()):
        self.name = name
        self.suggestions = list(suggestions)
        msg = f"unknown name {name!r}"
        if self.suggestions:
            msg += f"; did you mean: {', '.join(self.suggestions)}"
        super().__init__(msg)

    def __str__(self):
        return self.args[0]


class CheckpointError(UnseenDetError):
    pass


class CheckpointVersionError(CheckpointError):
    pass
