"""Binary parameter-server protocol over TCP.

Frame layout, bit-exact: magic "FCIL", u8 version (=1), u8 msg_type,
u64 LE payload length, payload. Model payloads reuse the nn blob format, so
weights cross the wire as float32 little-endian in both directions.

Message payloads:
  HELLO         u64 client_id, u32 feature_width, u32 num_classes
  GLOBAL_MODEL  u32 round, model blob
  CLIENT_UPDATE u32 round, u64 n_samples, model blob (n_samples == 0 means
                the client abstains this round and echoes the global blob)
  ROUND_CLOSE   u32 round
  SHUTDOWN      (empty)
  ERROR         u16 code, utf-8 message
"""
from __future__ import annotations

import logging
import socket
import struct
import threading
from enum import IntEnum

from . import nn
from .errors import ProtocolError
from .fed import (TAG_SELECT, ClientUpdate, FedConfig, RoundRecord,
                  aggregate, local_update, make_client_state, sample_clients)
from .replay import ClearConfig
from .rng import generator

log = logging.getLogger(__name__)

MAGIC = b"FCIL"
VERSION = 1
HEADER = struct.Struct("<4sBBQ")
MAX_PAYLOAD = 1 << 30

ERR_UNKNOWN_TYPE = 1
ERR_VERSION = 2
ERR_MALFORMED = 3
ERR_DIMENSION = 4
ERR_UNEXPECTED = 5


class MsgType(IntEnum):
    HELLO = 1
    GLOBAL_MODEL = 2
    CLIENT_UPDATE = 3
    ROUND_CLOSE = 4
    SHUTDOWN = 5
    ERROR = 6


class ConnectionClosed(ProtocolError):
    pass


class CleanTimeout(Exception):
    """Timed out between frames; the byte stream is still aligned."""


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    return HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def _recv_exact(sock: socket.socket, n: int, allow_clean_timeout: bool = False) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout:
            if allow_clean_timeout and not buf:
                raise CleanTimeout() from None
            raise ProtocolError("timed out mid-frame, stream desynced") from None
        if not chunk:
            raise ConnectionClosed("peer closed the connection")
        buf += chunk
        allow_clean_timeout = False
    return bytes(buf)


def read_frame(sock: socket.socket, allow_clean_timeout: bool = False) -> tuple[int, bytes]:
    head = _recv_exact(sock, HEADER.size, allow_clean_timeout)
    magic, version, msg_type, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {length} exceeds limit")
    payload = _recv_exact(sock, length)
    return msg_type, payload


def send_frame(sock: socket.socket, msg_type: int, payload: bytes = b"") -> None:
    sock.sendall(encode_frame(msg_type, payload))


def send_error(sock: socket.socket, code: int, message: str) -> None:
    try:
        send_frame(sock, MsgType.ERROR, struct.pack("<H", code) + message.encode())
    except OSError:
        pass


def pack_hello(client_id: int, feature_width: int, num_classes: int) -> bytes:
    return struct.pack("<QII", client_id, feature_width, num_classes)


def unpack_hello(payload: bytes) -> tuple[int, int, int]:
    if len(payload) != 16:
        raise ProtocolError("malformed HELLO payload")
    return struct.unpack("<QII", payload)


class ParameterServer:
    """Drives synchronous rounds over the wire (the aggregation-server role)."""

    def __init__(self, cfg: FedConfig, model: nn.MlpModel,
                 listen: tuple[str, int] = ("127.0.0.1", 0),
                 total_rounds: int | None = None, round_hook=None,
                 accept_timeout: float = 60.0):
        self.cfg = cfg
        self.model = model.copy()
        self.total_rounds = cfg.rounds if total_rounds is None else total_rounds
        self.round_hook = round_hook
        self.accept_timeout = accept_timeout
        self.history: list[RoundRecord] = []
        self.clients: dict[int, socket.socket] = {}
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind(listen)
        self.listener.listen(cfg.num_clients)
        self.address = self.listener.getsockname()

    def wait_for_clients(self) -> None:
        self.listener.settimeout(self.accept_timeout)
        while len(self.clients) < self.cfg.num_clients:
            try:
                conn, peer = self.listener.accept()
            except socket.timeout:
                raise ProtocolError(
                    f"only {len(self.clients)}/{self.cfg.num_clients} clients joined "
                    f"within {self.accept_timeout}s"
                ) from None
            conn.settimeout(self.accept_timeout)
            try:
                msg_type, payload = read_frame(conn)
            except ProtocolError as exc:
                log.warning("rejecting %s: %s", peer, exc)
                send_error(conn, ERR_VERSION, str(exc))
                conn.close()
                continue
            if msg_type != MsgType.HELLO:
                code = (ERR_UNKNOWN_TYPE if msg_type not in MsgType._value2member_map_
                        else ERR_UNEXPECTED)
                send_error(conn, code, "expected HELLO")
                conn.close()
                continue
            client_id, width, classes = unpack_hello(payload)
            if (client_id >= self.cfg.num_clients or client_id in self.clients
                    or width != self.model.input_dim or classes != self.model.output_dim):
                send_error(conn, ERR_DIMENSION,
                           f"rejected hello id={client_id} width={width} classes={classes}")
                conn.close()
                continue
            self.clients[int(client_id)] = conn
            log.info("client %d joined from %s", client_id, peer)

    def _drop(self, cid: int) -> None:
        sock = self.clients.pop(cid, None)
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass

    def _collect_update(self, cid: int, round_index: int, out: dict, lock: threading.Lock) -> None:
        sock = self.clients[cid]
        sock.settimeout(self.cfg.timeout)
        try:
            while True:
                try:
                    msg_type, payload = read_frame(sock, allow_clean_timeout=True)
                except CleanTimeout:
                    log.warning("client %d silent past %.1fs in round %d",
                                cid, self.cfg.timeout, round_index)
                    return
                if msg_type != MsgType.CLIENT_UPDATE:
                    if msg_type not in MsgType._value2member_map_:
                        send_error(sock, ERR_UNKNOWN_TYPE, f"unknown msg_type {msg_type}")
                    else:
                        send_error(sock, ERR_UNEXPECTED, f"unexpected msg {msg_type} mid-round")
                    raise ProtocolError(f"client {cid} sent msg {msg_type} mid-round")
                if len(payload) < 12:
                    raise ProtocolError("malformed CLIENT_UPDATE")
                upd_round, n_samples = struct.unpack_from("<IQ", payload, 0)
                if upd_round < round_index:
                    continue  # stale reply from a round this client was late for
                if upd_round > round_index:
                    raise ProtocolError(f"client {cid} answered future round {upd_round}")
                model = nn.deserialize_model(payload[12:])
                with lock:
                    out[cid] = (int(n_samples), model)
                return
        except (ProtocolError, OSError) as exc:
            log.warning("dropping client %d: %s", cid, exc)
            with lock:
                out[cid] = None  # poisoned: remove permanently

    def run(self) -> tuple[nn.MlpModel, list[RoundRecord]]:
        try:
            self.wait_for_clients()
            for r in range(self.total_rounds):
                rng = generator(self.cfg.seed, TAG_SELECT, r)
                selected = sample_clients(self.cfg.num_clients, self.cfg.participation, rng)
                blob = nn.serialize_model(self.model)
                live = []
                for cid in selected:
                    if cid not in self.clients:
                        continue
                    try:
                        send_frame(self.clients[cid], MsgType.GLOBAL_MODEL,
                                   struct.pack("<I", r) + blob)
                        live.append(cid)
                    except OSError:
                        self._drop(cid)

                results: dict[int, tuple[int, nn.MlpModel] | None] = {}
                lock = threading.Lock()
                threads = [threading.Thread(target=self._collect_update,
                                            args=(cid, r, results, lock))
                           for cid in live]
                for t in threads:
                    t.start()
                for t in threads:
                    t.join()

                updates = []
                dropped = [cid for cid in selected if cid not in live]
                for cid in live:
                    res = results.get(cid)
                    if res is None:
                        if cid in results:
                            self._drop(cid)  # desynced or protocol violation
                        dropped.append(cid)
                        continue
                    n_samples, model = res
                    if n_samples == 0:
                        dropped.append(cid)  # abstained: no data this round
                        continue
                    updates.append(ClientUpdate(cid, model, n_samples, r))
                if updates:
                    self.model = aggregate(updates)

                close = struct.pack("<I", r)
                for cid in list(self.clients):
                    try:
                        send_frame(self.clients[cid], MsgType.ROUND_CLOSE, close)
                    except OSError:
                        self._drop(cid)

                record = RoundRecord(r, selected, sorted(dropped), None)
                if self.round_hook is not None:
                    record.metrics = self.round_hook(r, self.model)
                self.history.append(record)
                log.info("round %d done: %d updates, %d dropped",
                         r, len(updates), len(record.dropped))
        finally:
            for cid in list(self.clients):
                try:
                    send_frame(self.clients[cid], MsgType.SHUTDOWN)
                except OSError:
                    pass
                self._drop(cid)
            self.listener.close()
        return self.model, self.history


def client_join(address: tuple[str, int], client_id: int, shard, cfg: FedConfig,
                mode: str = "plain", clear_cfg: ClearConfig | None = None,
                shard_for_round=None, connect_timeout: float = 30.0) -> int:
    """Run the client loop until the server shuts the federation down.

    Returns the number of rounds this client trained in. shard_for_round maps
    a round index to the subset of the shard to train on (schedule support);
    when it returns an empty dataset the client abstains for that round.
    """
    num_classes = len(shard.class_names)
    sock = socket.create_connection(address, timeout=connect_timeout)
    sock.settimeout(None)
    state = make_client_state(client_id, shard, cfg, clear_cfg)
    rounds_trained = 0
    try:
        send_frame(sock, MsgType.HELLO,
                   pack_hello(client_id, shard.feature_width, num_classes))
        while True:
            msg_type, payload = read_frame(sock)
            if msg_type == MsgType.GLOBAL_MODEL:
                (round_index,) = struct.unpack_from("<I", payload, 0)
                global_model = nn.deserialize_model(payload[4:])
                data = shard if shard_for_round is None else shard_for_round(round_index)
                if len(data) == 0:
                    send_frame(sock, MsgType.CLIENT_UPDATE,
                               struct.pack("<IQ", round_index, 0) + payload[4:])
                    continue
                upd = local_update(global_model, state, cfg, mode, clear_cfg,
                                   round_index, shard=data)
                send_frame(sock, MsgType.CLIENT_UPDATE,
                           struct.pack("<IQ", round_index, upd.n_samples)
                           + nn.serialize_model(upd.model))
                rounds_trained += 1
            elif msg_type == MsgType.ROUND_CLOSE:
                continue
            elif msg_type == MsgType.SHUTDOWN:
                return rounds_trained
            elif msg_type == MsgType.ERROR:
                (code,) = struct.unpack_from("<H", payload, 0)
                raise ProtocolError(f"server error {code}: {payload[2:].decode(errors='replace')}")
            else:
                send_error(sock, ERR_UNKNOWN_TYPE, f"unknown msg_type {msg_type}")
                raise ProtocolError(f"unknown msg_type {msg_type} from server")
    finally:
        sock.close()
