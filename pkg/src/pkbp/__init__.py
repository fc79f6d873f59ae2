"""Gamma-robust VM scheduling: probabilistic k-bins packing."""
from .core import EPS, HostState, Mapping, VmRecord, host_load, make_hosts, make_vms
from .gamma import GammaTable, bound_b, bound_b_exact, concave_approx, gamma_of, get_table
from .symmetrize import UtilInterval, dominates, symmetric_sample, symmetrize

__version__ = "0.1.0"

__all__ = [
    "EPS",
    "GammaTable",
    "HostState",
    "Mapping",
    "UtilInterval",
    "VmRecord",
    "bound_b",
    "bound_b_exact",
    "concave_approx",
    "dominates",
    "gamma_of",
    "get_table",
    "host_load",
    "make_hosts",
    "make_vms",
    "symmetric_sample",
    "symmetrize",
]
