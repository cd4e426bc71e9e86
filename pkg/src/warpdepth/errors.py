"""Shared exception types."""


class DegenerateInputError(ValueError):
    """Input too small or otherwise outside an operation's domain."""


class EmptyOverlapError(ValueError):
    """A reconstruction term has no valid pixels to average over."""


class DivergenceError(RuntimeError):
    """Optimization produced non-finite values or left the pose domain."""


class ParseError(ValueError):
    """Malformed file content; carries the offending line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


class RenderError(RuntimeError):
    """Synthetic camera placed where the scene geometry cannot be rendered."""
