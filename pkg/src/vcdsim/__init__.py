"""Cooperative prefetching of network-coded content to roadside access points."""

__version__ = "0.1.0"
