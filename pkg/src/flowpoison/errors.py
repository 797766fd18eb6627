"""Exception types shared across the toolkit."""


class FormatError(ValueError):
    """Input file does not conform to the expected on-disk format."""


class ConfigError(ValueError):
    """A configuration value is out of its legal range or inconsistent."""


class AttackError(RuntimeError):
    """An attack stage cannot proceed (e.g. no usable victim-class data)."""
