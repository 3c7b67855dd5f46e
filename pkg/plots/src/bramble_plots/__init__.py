"""Figure rendering for experiment output directories.

Reads only the published CSV/JSON files written by the simulation CLI and
renders the five report figures deterministically.
"""

__version__ = "0.1.0"
