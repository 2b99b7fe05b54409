"""Exception hierarchy.

Everything raised on bad input derives from :class:`RadarAugError` so callers
(notably the CLI) can map data problems to a single exit code.
"""


class RadarAugError(Exception):
    """Base class for toolkit errors."""


class DomainError(RadarAugError, ValueError):
    """A numeric argument lies outside the operation's valid domain."""


class InvalidInputError(RadarAugError, ValueError):
    """Malformed or incongruent input arrays/images."""


class EmptySelectionError(RadarAugError, ValueError):
    """A mask or selection contains no elements."""


class SingularFitError(RadarAugError, ValueError):
    """Regression design is degenerate (e.g. all ranges equal)."""


class UnknownClassError(RadarAugError, KeyError):
    """Class label not present in a model."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown class"


class InvalidParamsError(RadarAugError, ValueError):
    """Detector parameters inconsistent with the data they are applied to."""


class InvalidBoxError(RadarAugError, ValueError):
    """Box does not intersect the image it is applied to."""


class UndefinedMetricError(RadarAugError, ValueError):
    """Metric is undefined for the given input (e.g. AP with no ground truth)."""


class FormatError(RadarAugError, ValueError):
    """On-disk file or sidecar does not match the expected format."""
