"""Desk-scale continual-learning benchmark harness.

Builds task streams (class splits, domain shifts, NC/NI granularity),
trains eight strategies on them with a verified dense-network core, records
accuracy matrices, and sweeps the adaptability / sensitivity / efficiency
protocol grids into reproducible report trees.
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
