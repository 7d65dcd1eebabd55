"""Exception types shared across the library."""


class H2Error(Exception):
    """Base class for all library-specific errors."""


class PointFormatError(H2Error):
    """A point/vector file is malformed; carries file location context."""

    def __init__(self, path, detail, line=None):
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {detail}")


class CoincidentPointsError(H2Error):
    """Two distinct point indices have zero separation (singular kernel)."""

    def __init__(self, i, j):
        self.i, self.j = i, j
        super().__init__(f"coincident points at indices {i} and {j}")


class NotPositiveDefiniteError(H2Error):
    """Cholesky hit a non-positive pivot."""

    def __init__(self, pivot, level=None, box=None):
        self.pivot = pivot
        self.level = level
        self.box = box
        loc = "" if level is None else f" (level {level}, box {box})"
        super().__init__(f"matrix not positive definite at pivot {pivot}{loc}")


class SingularTriangularError(H2Error):
    """Triangular solve with a (numerically) zero diagonal entry."""


class StructureError(H2Error):
    """An internal structural invariant was violated."""


class OracleCapError(H2Error):
    """Dense-oracle problem size exceeds the configured cap."""
