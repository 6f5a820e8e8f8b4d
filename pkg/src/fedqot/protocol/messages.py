"""Frame codec for TCN/ECN messages.

Frame layout: ``u32 length (big-endian) | u8 msg_type | payload``, where
``length = 1 + len(payload)``. Control messages carry canonical JSON (sorted
keys, no whitespace); GLOBAL_MODEL and LOCAL_UPDATE carry a little-endian
header followed by a parameter blob.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

from ..errors import FormatError, ProtocolError, SchemaError, UsageError
from ..fedavg import Hyperparams
from ..nn import ModelSpec, ParameterVector, deserialize_params, serialize_params

PROTOCOL_VERSION = 1
MAX_FRAME = 64 * 1024 * 1024
_LEN = struct.Struct(">I")
_ROUND = struct.Struct("<I")
_ROUND_N = struct.Struct("<IQ")


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False).encode("utf-8")


def _require(d, key, kind, msg_name):
    if key not in d:
        raise FormatError(f"{msg_name}: missing field {key!r}")
    value = d[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise FormatError(f"{msg_name}: field {key!r} must be an integer")
    if kind is not int and not isinstance(value, kind):
        raise FormatError(f"{msg_name}: field {key!r} has the wrong type")
    return value


def _check_keys(d, allowed, msg_name):
    if not isinstance(d, dict):
        raise FormatError(f"{msg_name}: payload must be a JSON object")
    extra = set(d) - set(allowed)
    if extra:
        raise FormatError(f"{msg_name}: unexpected fields {sorted(extra)}")


@dataclass(frozen=True)
class Hello:
    ecn_id: str
    n_samples: int
    schema_hash: int
    protocol_version: int = PROTOCOL_VERSION
    TYPE = 0x01

    def payload(self) -> bytes:
        return _canonical({"ecn_id": self.ecn_id, "n_samples": self.n_samples,
                           "schema_hash": f"{self.schema_hash:016x}",
                           "protocol_version": self.protocol_version})

    @classmethod
    def parse(cls, d):
        _check_keys(d, ("ecn_id", "n_samples", "schema_hash", "protocol_version"), "HELLO")
        digest = _require(d, "schema_hash", str, "HELLO")
        if len(digest) != 16 or digest != digest.lower():
            raise FormatError("HELLO: schema_hash must be 16 lowercase hex digits")
        try:
            value = int(digest, 16)
        except ValueError:
            raise FormatError("HELLO: schema_hash is not hexadecimal") from None
        return cls(_require(d, "ecn_id", str, "HELLO"), _require(d, "n_samples", int, "HELLO"),
                   value, _require(d, "protocol_version", int, "HELLO"))


@dataclass(frozen=True)
class Eligible:
    accepted: bool
    reason: str = ""
    TYPE = 0x02

    def payload(self) -> bytes:
        return _canonical({"accepted": self.accepted, "reason": self.reason})

    @classmethod
    def parse(cls, d):
        _check_keys(d, ("accepted", "reason"), "ELIGIBLE")
        return cls(_require(d, "accepted", bool, "ELIGIBLE"), _require(d, "reason", str, "ELIGIBLE"))


@dataclass(frozen=True)
class TrainConfig:
    """Model spec and hyperparameters; optionally the shared feature normalization stats."""

    model_spec: ModelSpec
    hyperparams: Hyperparams
    feature_stats: dict | None = None
    TYPE = 0x03

    def payload(self) -> bytes:
        return _canonical({"model_spec": self.model_spec.to_dict(),
                           "hyperparams": self.hyperparams.to_dict(),
                           "feature_stats": self.feature_stats})

    @classmethod
    def parse(cls, d):
        _check_keys(d, ("model_spec", "hyperparams", "feature_stats"), "TRAIN_CONFIG")
        try:
            spec = ModelSpec.from_dict(_require(d, "model_spec", dict, "TRAIN_CONFIG"))
            hp = Hyperparams.from_dict(_require(d, "hyperparams", dict, "TRAIN_CONFIG"))
        except (SchemaError, UsageError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"TRAIN_CONFIG: {exc}") from None
        stats = d.get("feature_stats")
        if stats is not None and not isinstance(stats, dict):
            raise FormatError("TRAIN_CONFIG: feature_stats must be an object or null")
        return cls(spec, hp, stats)


@dataclass(frozen=True)
class GlobalModel:
    round_index: int
    param_blob: bytes
    TYPE = 0x04

    @classmethod
    def of(cls, round_index: int, params: ParameterVector) -> GlobalModel:
        return cls(round_index, serialize_params(params))

    def params(self, spec=None) -> ParameterVector:
        return deserialize_params(self.param_blob, spec)

    def payload(self) -> bytes:
        return _ROUND.pack(self.round_index) + self.param_blob

    @classmethod
    def parse_bytes(cls, payload):
        if len(payload) < _ROUND.size:
            raise FormatError("GLOBAL_MODEL payload too short")
        (round_index,) = _ROUND.unpack_from(payload)
        blob = bytes(payload[_ROUND.size:])
        deserialize_params(blob)
        return cls(round_index, blob)


@dataclass(frozen=True)
class LocalUpdate:
    round_index: int
    n_samples: int
    param_blob: bytes
    TYPE = 0x05

    @classmethod
    def of(cls, round_index: int, n_samples: int, params: ParameterVector) -> LocalUpdate:
        return cls(round_index, n_samples, serialize_params(params))

    def params(self, spec=None) -> ParameterVector:
        return deserialize_params(self.param_blob, spec)

    def payload(self) -> bytes:
        return _ROUND_N.pack(self.round_index, self.n_samples) + self.param_blob

    @classmethod
    def parse_bytes(cls, payload):
        if len(payload) < _ROUND_N.size:
            raise FormatError("LOCAL_UPDATE payload too short")
        round_index, n = _ROUND_N.unpack_from(payload)
        blob = bytes(payload[_ROUND_N.size:])
        deserialize_params(blob)
        return cls(round_index, n, blob)


@dataclass(frozen=True)
class Done:
    final_accuracy: float | None = None
    TYPE = 0x06

    def payload(self) -> bytes:
        return _canonical({"final_accuracy": self.final_accuracy})

    @classmethod
    def parse(cls, d):
        _check_keys(d, ("final_accuracy",), "DONE")
        acc = d.get("final_accuracy")
        if acc is not None and (isinstance(acc, bool) or not isinstance(acc, (int, float))):
            raise FormatError("DONE: final_accuracy must be a number or null")
        return cls(None if acc is None else float(acc))


@dataclass(frozen=True)
class Error:
    code: str
    detail: str = ""
    TYPE = 0x7F

    def payload(self) -> bytes:
        return _canonical({"code": self.code, "detail": self.detail})

    @classmethod
    def parse(cls, d):
        _check_keys(d, ("code", "detail"), "ERROR")
        return cls(_require(d, "code", str, "ERROR"), _require(d, "detail", str, "ERROR"))


MESSAGE_TYPES = {cls.TYPE: cls for cls in (Hello, Eligible, TrainConfig, GlobalModel, LocalUpdate, Done, Error)}
BINARY_TYPES = (GlobalModel.TYPE, LocalUpdate.TYPE)


def encode_frame(msg) -> bytes:
    payload = msg.payload()
    length = 1 + len(payload)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds the {MAX_FRAME}-byte limit")
    return _LEN.pack(length) + bytes([msg.TYPE]) + payload


def check_length(length: int) -> None:
    if length < 1:
        raise ProtocolError("frame length must cover the type byte")
    if length > MAX_FRAME:
        raise ProtocolError(f"frame claims {length} bytes, limit is {MAX_FRAME}")


def decode_body(msg_type: int, payload: bytes):
    cls = MESSAGE_TYPES.get(msg_type)
    if cls is None:
        raise ProtocolError(f"unknown message type 0x{msg_type:02x}")
    if msg_type in BINARY_TYPES:
        return cls.parse_bytes(payload)
    try:
        text = bytes(payload).decode("utf-8")
        d = json.loads(text, parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError, RecursionError) as exc:
        raise FormatError(f"malformed JSON payload: {exc}") from None
    return cls.parse(d)


def _reject_constant(name):
    raise ValueError(f"non-standard JSON constant {name}")


def decode_frame(data: bytes):
    """Decode exactly one complete frame; trailing or missing bytes are errors."""
    data = bytes(data)
    if len(data) < _LEN.size:
        raise FormatError("frame shorter than its length prefix")
    (length,) = _LEN.unpack_from(data)
    check_length(length)
    if len(data) != _LEN.size + length:
        raise FormatError(f"frame declares {length} bytes but {len(data) - _LEN.size} follow the prefix")
    return decode_body(data[_LEN.size], data[_LEN.size + 1:])


def read_message(stream):
    """Read one frame from a stream; the length is bound-checked before the body is read."""
    (length,) = _LEN.unpack(stream.recv_exact(_LEN.size))
    check_length(length)
    body = stream.recv_exact(length)
    return decode_body(body[0], body[1:])


def write_message(stream, msg) -> None:
    stream.send(encode_frame(msg))

