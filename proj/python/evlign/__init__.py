"""Python bindings for the evlign C++ library."""

from ._evlign import *  # noqa: F401,F403
from ._evlign import __version__, EvlignError  # noqa: F401
