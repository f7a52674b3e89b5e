"""Data-driven stabilization of underactuated planar chains.

The package turns recorded trajectory data of an underactuated mechanical
system into a stabilizing feedback controller, and ships a planar N-link
chain simulator plus an experiment harness for balance-from-failures runs.
"""

__version__ = "0.1.0"
