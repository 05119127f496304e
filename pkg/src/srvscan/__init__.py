"""Static detection of state-reverting vulnerabilities in EVM contracts."""

__version__ = "0.1.0"
