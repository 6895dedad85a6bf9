"""Shared exception types for protocol engines and transport."""


class ConfigError(ValueError):
    """A party configuration violates an invariant (bad (n, t), root mismatch, ...)."""


class ProtocolError(RuntimeError):
    """A peer message is malformed, out of phase, or inconsistent with the session."""


class TransportError(RuntimeError):
    """Endpoint failure that is not a timeout (closed peer, oversized frame, ...)."""


class TransportClosed(TransportError):
    """The peer closed the connection mid-stream."""
