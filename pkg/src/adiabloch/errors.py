"""Exception hierarchy shared by all modules.

Each error carries an ``exit_code`` used by the CLI: 2 for configuration
problems, 3 for numerical failures, 4 for I/O.
"""


class AdiaBlochError(Exception):
    exit_code = 3
    kind = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": self.kind, "message": str(self)}
        out.update({k: _jsonable(v) for k, v in self.details.items()})
        return out


def _jsonable(value):
    try:
        import numpy as np

        if isinstance(value, np.ndarray):
            return value.tolist()
        if isinstance(value, np.generic):
            return value.item()
    except ImportError:  # pragma: no cover
        pass
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


class DegenerateLatticeError(AdiaBlochError, ValueError):
    kind = "degenerate_lattice"


class GridError(AdiaBlochError, ValueError):
    kind = "grid"


class RealnessError(AdiaBlochError, ValueError):
    kind = "realness"


class GapClosedError(AdiaBlochError):
    kind = "gap_closed"


class FiberSolveError(AdiaBlochError):
    kind = "eigensolver"


class GaugeError(AdiaBlochError, ValueError):
    kind = "gauge"


class GridTooCoarseError(AdiaBlochError):
    kind = "grid_too_coarse"


class NonQuantizedError(AdiaBlochError):
    kind = "non_quantized"


class DegeneracyError(AdiaBlochError):
    kind = "near_degeneracy"


class PropagationError(AdiaBlochError):
    kind = "propagation"


class ConfigError(AdiaBlochError, ValueError):
    exit_code = 2
    kind = "config"


class OutputError(AdiaBlochError, OSError):
    exit_code = 4
    kind = "io"
