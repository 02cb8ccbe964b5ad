"""Two-side cross-domain recommendation model."""

from ._twins import *  # noqa: F401,F403
from ._twins import __doc__  # noqa: F401

__version__ = "0.1.0"
