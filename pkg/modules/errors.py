"""
Error types shared across the trimlab modules.
"""

from typing import Optional


class TrimlabError(Exception):
    """Base class for every error raised by trimlab"""
    pass


class ConfigError(TrimlabError):
    """Custom exception for configuration errors"""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.message = message
        self.field = field
        self.line = line
        where = ""
        if field:
            where += f" [field '{field}']"
        if line:
            where += f" [line {line}]"
        super().__init__(f"{message}{where}")


class WrongRegime(TrimlabError):
    """The tail index is outside the regime a theorem or experiment covers"""
    pass


class DegenerateState(TrimlabError):
    """An orbit landed on a point where the map is undefined"""
    pass


class DegenerateHit(TrimlabError):
    """An orbit point hit the singular site exactly"""
    pass


class InsufficientPoints(TrimlabError):
    """Asked to trim at least as many terms as the sum has"""
    pass


class QuadratureFailure(TrimlabError):
    """Numerical integration did not reach the requested tolerance"""
    pass


class RootFindFailure(TrimlabError):
    """Root bracketing or solving failed"""
    pass


class InsufficientTail(TrimlabError):
    """Too few samples in the requested tail window"""
    pass


class IOFailure(TrimlabError):
    """Result files could not be written"""
    pass
