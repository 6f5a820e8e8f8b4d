"""Edge Contributor Node client.

Only HELLO (id, sample count, schema digest) and parameter blobs leave the
node; raw samples are encoded locally with the stats the TCN distributes.
"""
from __future__ import annotations

import enum
import logging

from .. import qot
from ..errors import FedQoTError, SchemaError
from ..fedavg import ecn_update
from ..nn import ParameterVector
from .messages import Done, Eligible, Error, GlobalModel, Hello, LocalUpdate, TrainConfig, read_message, write_message
from .transport import ConnectionClosed, connect_tcp

log = logging.getLogger(__name__)


class ExitStatus(enum.IntEnum):
    DONE = 0
    FAILED = 2
    REJECTED = 4


class _Rejected(Exception):
    pass


class EcnClient:
    """Connects to a TCN and answers every GLOBAL_MODEL with a LOCAL_UPDATE.

    ``local_data`` is either a list of ``LightpathSample`` (encoded once the
    TRAIN_CONFIG arrives, using its feature stats) or an already encoded
    ``qot.Dataset``. ``connect`` is an endpoint string or a zero-argument
    callable returning a fresh stream; it is called again for the single
    reconnect attempt after a connection loss.
    """

    def __init__(self, connect, local_data, ecn_id: str, schema: qot.FeatureSchema | None = None,
                 ssl_context=None, reconnects: int = 1):
        if isinstance(connect, str):
            endpoint = connect
            connect = lambda: connect_tcp(endpoint, ssl_context)  # noqa: E731
        self._connect = connect
        self.ecn_id = ecn_id
        self.reconnects = reconnects
        if isinstance(local_data, qot.Dataset):
            self.schema = local_data.schema
            self._samples = None
            self.dataset = local_data
        else:
            self.schema = schema or qot.default_schema()
            self._samples = list(local_data)
            self.dataset = None
        self.n_samples = len(local_data)
        self.config: TrainConfig | None = None
        self.updates: list[tuple[int, ParameterVector]] = []
        self.final_accuracy: float | None = None
        self.status: ExitStatus | None = None
        self.reason = ""

    def _prepare_data(self, config: TrainConfig):
        if self._samples is not None and self.dataset is None:
            stats = config.feature_stats
            if stats is None:
                log.warning("TRAIN_CONFIG carries no feature stats; normalizing with local stats")
            self.dataset, _ = qot.encode_and_normalize(self._samples, self.schema, stats)
        if self.dataset.features.shape[1] != config.model_spec.input_dim:
            raise SchemaError(f"local feature width {self.dataset.features.shape[1]} does not match "
                              f"model input_dim {config.model_spec.input_dim}")

    def _session(self, stream):
        write_message(stream, Hello(self.ecn_id, self.n_samples, self.schema.hash))
        reply = read_message(stream)
        if isinstance(reply, Error):
            raise _Rejected(f"{reply.code}: {reply.detail}")
        if not isinstance(reply, Eligible):
            raise FedQoTError(f"expected ELIGIBLE, got {type(reply).__name__}")
        if not reply.accepted:
            raise _Rejected(reply.reason)
        while True:
            msg = read_message(stream)
            if isinstance(msg, TrainConfig):
                self.config = msg
                self._prepare_data(msg)
            elif isinstance(msg, GlobalModel):
                if self.config is None:
                    raise FedQoTError("GLOBAL_MODEL arrived before TRAIN_CONFIG")
                spec = self.config.model_spec
                update = ecn_update(self.dataset, msg.params(spec), self.config.hyperparams, msg.round_index)
                write_message(stream, LocalUpdate.of(msg.round_index, self.n_samples, update))
                self.updates.append((msg.round_index, update))
            elif isinstance(msg, Done):
                self.final_accuracy = msg.final_accuracy
                return
            elif isinstance(msg, Error):
                raise FedQoTError(f"TCN error {msg.code}: {msg.detail}")
            else:
                raise FedQoTError(f"unexpected {type(msg).__name__} from TCN")

    def run(self) -> ExitStatus:
        attempts = 1 + self.reconnects
        for attempt in range(1, attempts + 1):
            try:
                stream = self._connect()
            except OSError as exc:
                self.reason = f"connect failed: {exc}"
                log.warning("%s: %s", self.ecn_id, self.reason)
                continue
            try:
                self._session(stream)
                self.status = ExitStatus.DONE
                return self.status
            except _Rejected as exc:
                self.reason = str(exc)
                self.status = ExitStatus.REJECTED
                return self.status
            except (ConnectionClosed, OSError) as exc:
                self.reason = f"connection lost: {exc}"
                log.warning("%s: %s (attempt %d/%d)", self.ecn_id, self.reason, attempt, attempts)
            except FedQoTError as exc:
                self.reason = str(exc)
                log.error("%s: %s", self.ecn_id, self.reason)
                break
            finally:
                stream.close()
        self.status = ExitStatus.FAILED
        return self.status


def ecn_client(endpoint, local_data, ecn_id, **kwargs) -> ExitStatus:
    return EcnClient(endpoint, local_data, ecn_id, **kwargs).run()
