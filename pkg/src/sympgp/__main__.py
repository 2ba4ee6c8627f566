"""Allow ``python -m sympgp`` as an alternative to the console script."""

from .cli import entry_point

entry_point()
