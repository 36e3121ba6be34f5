"""Error types shared across the package.

Contract violations (bad dimensions, out-of-range coordinates, broken
preconditions) raise plain ValueError. Configuration problems (bad flags,
missing scene assets, malformed config files) raise ConfigurationError so the
CLI can map them to exit code 2 while I/O failures map to 3.
"""


class ConfigurationError(Exception):
    """A flag/config/input combination that can never be valid."""
