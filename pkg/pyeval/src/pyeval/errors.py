"""Error hierarchy for the adapter. Everything user-facing derives from AdapterError."""


class AdapterError(Exception):
    """Base class for adapter failures reported as exit status 1."""


class ConfigError(AdapterError):
    """Malformed or inconsistent adapter configuration."""


class DatasetError(AdapterError):
    """A dataset could not be built from its identifiers."""


class MappingError(AdapterError):
    """The runtime/tool name map is not a bijection or does not cover."""


class CheckpointError(AdapterError):
    """A checkpoint file is unreadable or disagrees with the model shapes."""
