"""Socket-level network recorder for isolation assertions.

While active, every ``socket.connect`` / ``connect_ex`` in the process is
recorded. The isolation policy holds when every attempt targets loopback
(or a unix socket, e.g. the container runtime's): with outbound access
disabled, nothing in the hub may reach past the machine.
"""

from __future__ import annotations

import socket
import threading
from dataclasses import dataclass


@dataclass(frozen=True)
class ConnectionAttempt:
    family: int
    address: object  # (host, port) for INET, path str for UNIX

    @property
    def is_loopback(self) -> bool:
        if self.family == socket.AF_UNIX:
            return True  # local IPC by definition
        if isinstance(self.address, tuple) and self.address:
            host = str(self.address[0])
            return (host.startswith("127.") or host in ("localhost", "::1")
                    or host.startswith("::ffff:127."))
        return False


class NetworkRecorder:
    """Context manager patching socket connect calls to record attempts."""

    def __init__(self):
        self.attempts: list[ConnectionAttempt] = []
        self._lock = threading.Lock()
        self._orig_connect = None
        self._orig_connect_ex = None

    def __enter__(self) -> "NetworkRecorder":
        recorder = self
        self._orig_connect = socket.socket.connect
        self._orig_connect_ex = socket.socket.connect_ex

        def connect(sock, address):
            recorder._note(sock, address)
            return recorder._orig_connect(sock, address)

        def connect_ex(sock, address):
            recorder._note(sock, address)
            return recorder._orig_connect_ex(sock, address)

        socket.socket.connect = connect
        socket.socket.connect_ex = connect_ex
        return self

    def __exit__(self, *exc):
        socket.socket.connect = self._orig_connect
        socket.socket.connect_ex = self._orig_connect_ex
        return False

    def _note(self, sock: socket.socket, address) -> None:
        with self._lock:
            self.attempts.append(ConnectionAttempt(sock.family, address))

    def non_loopback_attempts(self) -> list[ConnectionAttempt]:
        with self._lock:
            return [a for a in self.attempts if not a.is_loopback]
