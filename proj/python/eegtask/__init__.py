"""EEG coherence features, SMO SVM, recursive feature elimination and the shallow CNN."""

from ._eegtask import *  # noqa: F401,F403
from ._eegtask import EegError

__all__ = [name for name in dir() if not name.startswith("_")]
