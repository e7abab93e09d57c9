"""Exception hierarchy for the toolkit.

Everything raised on purpose derives from ToolkitError so callers (and the
CLI) can catch one type and map it to a nonzero exit status.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class StoreError(ToolkitError):
    """Problem reading or writing a checkpoint file."""


class MalformedHeaderError(StoreError):
    """Header is truncated, not valid JSON, or structurally wrong."""


class UnknownDtypeError(StoreError):
    """Header declares a dtype tag outside the supported set."""


class ByteRangeError(StoreError):
    """Declared data offsets are inconsistent with shapes or the payload."""


class NonFiniteTensorError(StoreError):
    """A loaded tensor contains NaN or infinity under strict loading."""


class CompatibilityError(ToolkitError):
    """Two tensor maps disagree on names, shapes, or dtypes."""

    def __init__(self, report):
        self.report = report
        super().__init__(str(report))


class TopologyError(ToolkitError):
    """Block-structure inference failed for a parameter name set."""


class ScheduleError(ToolkitError):
    """Invalid scaling-schedule parameters or depth arguments."""


class DegenerateMergeError(ToolkitError):
    """A merge produced a vector with no usable signal (e.g. zero norm)."""


class EvaluatorError(ToolkitError):
    """An evaluator failed to run or produced unusable output."""


class SearchError(ToolkitError):
    """Invalid grid or search configuration."""
