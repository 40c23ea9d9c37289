"""Retrieval-composed deep prompt tuning on a frozen toy dual encoder.

Thin wrapper around the `_attriprompt` extension module: per-layer visual
attribute clustering, similarity-keyed prompt retrieval, deep prompt
injection, the combined training objective and weighted test-time fusion.
"""

try:
    from attriprompt._attriprompt import *  # noqa: F401,F403  (installed layout)
    from attriprompt import _attriprompt as _impl
except ImportError:  # build-tree layout: extension on sys.path
    from _attriprompt import *  # noqa: F401,F403
    import _attriprompt as _impl

__all__ = [name for name in dir(_impl) if not name.startswith("_")]
