"""Desk-scale space-time video diffusion: python surface over the C++ core."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
