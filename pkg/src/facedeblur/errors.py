"""Exception types shared across the package.

Invalid arguments (bad shapes, non-finite values) raise plain ValueError;
the classes below cover failures that callers are expected to branch on.
"""


class ConfigError(Exception):
    """A configuration value or combination of values is unusable."""


class DataMissingError(Exception):
    """A required data record (frame, landmark entry, ...) is absent."""


class CheckpointError(Exception):
    """A checkpoint is malformed or does not match the current config."""


class DependencyError(Exception):
    """A training stage was started before its prerequisite stages."""
