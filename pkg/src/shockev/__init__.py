"""Shock-wave motion measurement from asynchronous event-camera streams."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("shockev")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
