__version__ = "0.1.0"


class LangevinMixError(Exception):
    """Base class for every error raised by the package."""
    pass
