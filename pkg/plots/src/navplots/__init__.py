"""Read-only figure rendering for navmem run artifacts.

Consumes only the documented file formats (metrics/sweep/distance CSVs,
trajectory and snapshot JSONL, MGWORLD1 world files) and never mutates
its inputs; re-running a plot is idempotent.
"""

__version__ = "0.1.0"
