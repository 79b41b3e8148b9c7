"""Exception hierarchy shared by every cvtrack module."""


class CVTrackError(Exception):
    pass


class ShapeError(CVTrackError, ValueError):
    """Array dimensions disagree with what an operation requires."""


class InputError(CVTrackError, ValueError):
    pass


class StateError(CVTrackError, RuntimeError):
    """An object was used out of order (missing cache, stale frame index)."""


class DataError(CVTrackError, ValueError):
    pass


class UndefinedLossError(CVTrackError, ValueError):
    pass


class ConfigError(CVTrackError, ValueError):
    pass


class FormatError(CVTrackError, ValueError):
    """A file does not follow its binary or text layout."""


class ParseError(FormatError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
