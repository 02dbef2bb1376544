"""
Exception types for MACE matting
"""

from typing import Optional


class MaceError(Exception):
    """Base class for all matting pipeline errors"""


class ParameterError(MaceError, ValueError):
    """A numeric parameter is outside its admissible range"""


class ConfigError(MaceError, ValueError):
    """Invalid configuration file or override"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class StateError(MaceError, ValueError):
    """Stacked state vectors are inconsistent"""


class AgentError(MaceError):
    """An agent failed or produced non-finite values"""

    def __init__(self, agent: str, message: str, iteration: Optional[int] = None):
        self.agent = agent
        self.iteration = iteration
        at = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"agent '{agent}'{at}: {message}")


class AssemblyError(MaceError, ValueError):
    """Sparse matrix assembly received out-of-range or non-symmetric blocks"""


class SolverError(MaceError):
    """An iterative solver did not converge or detected indefiniteness"""

    def __init__(self, message: str, residual: Optional[float] = None, iterations: Optional[int] = None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class ImageError(MaceError):
    """Raster could not be read, written or matched"""


class FrameError(MaceError):
    """Any failure while processing one frame"""

    def __init__(self, frame_index: int, cause: Exception):
        self.frame_index = frame_index
        self.cause = cause
        super().__init__(f"frame {frame_index}: {cause}")
