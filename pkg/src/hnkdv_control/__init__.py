"""Small-time approximate controllability experiments for higher-order KdV equations on the torus."""
from __future__ import annotations

__version__ = "0.1.0"
