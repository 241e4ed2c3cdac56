"""Group-equivariant hard-alignment string transducer for SCAN."""

__version__ = "0.1.0"
