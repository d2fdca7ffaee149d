"""Exception hierarchy.

Every failure raised by the toolkit derives from :class:`SteklovError`; the CLI
maps the subclasses onto exit codes and records ``type(err).__name__`` in the
run manifest.
"""


class SteklovError(Exception):
    """Base class for all toolkit errors."""


# mesh
class MeshError(SteklovError):
    pass


class MeshQualityError(MeshError):
    """A tetrahedron is degenerate or inverted."""


class TopologyError(MeshError):
    """The tet complex is not a manifold with boundary."""


class GmshParseError(MeshError):
    pass


class UnsupportedVersionError(GmshParseError):
    pass


class MissingSectionError(GmshParseError):
    pass


class UnsupportedElementError(GmshParseError):
    pass


class DanglingIndexError(GmshParseError):
    pass


# assembly
class AssemblyError(SteklovError):
    pass


class GeometryError(SteklovError):
    """Boundary geometry unusable for the tangential constraint."""


# spectral / solution operators
class CoercivityError(SteklovError):
    """The penalized form could not be made positive definite."""


class EigensolverError(SteklovError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DomainTooCoarseError(SteklovError):
    """The mesh has no interior degrees of freedom."""


class RayleighDivisionError(SteklovError, ZeroDivisionError):
    """Trial field has vanishing boundary trace."""


class ZeroInSigmaError(SteklovError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MeshMismatchError(SteklovError):
    pass


# deflation
class AlphaOnDirichletSpectrumError(SteklovError):
    pass


class DeflationError(SteklovError):
    pass


class GapInconsistencyError(SteklovError):
    pass


# cli
class ConfigError(SteklovError):
    pass


class ConvergenceStudyError(SteklovError):
    pass
