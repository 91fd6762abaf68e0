"""Node importance estimation on heterogeneous higher-order knowledge graphs."""

__version__ = "0.1.0"
