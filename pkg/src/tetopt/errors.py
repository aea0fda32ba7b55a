"""Exception types shared across the toolkit."""


class DegenerateGeometryError(ValueError):
    """A geometric primitive is degenerate (zero area/volume) where it must not be."""


class NoSurfaceError(RuntimeError):
    """No candidate surface faces exist (e.g. all tetrahedra unoccupied)."""


class NoSolidError(RuntimeError):
    """No occupied tetrahedra to evaluate."""


class ParseError(ValueError):
    """A file could not be parsed; carries the offending location."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc += str(path)
        if line is not None:
            loc += f":{line}"
        if loc:
            message = f"{loc}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line
