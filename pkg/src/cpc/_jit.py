"""Thin wrapper around numba so the package still imports without it.

Hot loops (chain dynamics, ball-tree search) are compiled with numba when
available; otherwise they run as plain Python, which is correct but slow.
"""

try:
    from numba import njit

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def deco(fn):
            return fn

        return deco
