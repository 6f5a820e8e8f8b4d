"""Framed TCN/ECN protocol over reliable byte streams."""
from .client import EcnClient, ExitStatus, ecn_client
from .coordinator import SessionState, TrainingCoordinator, TrainingOutcome, tcn_serve
from .messages import (MAX_FRAME, Done, Eligible, Error, GlobalModel, Hello, LocalUpdate, TrainConfig,
                       decode_frame, encode_frame, read_message, write_message)
from .transport import (ConnectionClosed, MemoryStream, SocketStream, client_ssl_context, connect_tcp,
                        memory_pair, parse_endpoint, server_ssl_context)

__all__ = [
    "EcnClient", "ExitStatus", "ecn_client", "SessionState", "TrainingCoordinator", "TrainingOutcome",
    "tcn_serve", "MAX_FRAME", "Done", "Eligible", "Error", "GlobalModel", "Hello", "LocalUpdate",
    "TrainConfig", "decode_frame", "encode_frame", "read_message", "write_message", "ConnectionClosed",
    "MemoryStream", "SocketStream", "client_ssl_context", "connect_tcp", "memory_pair",
    "parse_endpoint", "server_ssl_context",
]
