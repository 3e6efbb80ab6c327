"""Desk-scale test fixtures: a mock weight hub and a socket-level network
recorder for isolation assertions."""

from .mock_hub import MockHub
from .net_recorder import NetworkRecorder

__all__ = ["MockHub", "NetworkRecorder"]
