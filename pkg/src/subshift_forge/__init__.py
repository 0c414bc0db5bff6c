from importlib.metadata import version

from . import ergodicity, filters, hierarchy, schedule, sequences, symbolic

__all__ = ["ergodicity", "filters", "hierarchy", "schedule", "sequences", "symbolic"]

__version__ = version("subshift-forge")
