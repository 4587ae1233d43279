"""Wait-k simultaneous translation: policies, metrics, a prefix-to-prefix
transformer, decoding and two-stage (CE, then minimum-risk) training."""

from ._simt import *  # noqa: F401,F403
from ._simt import __version__  # noqa: F401
