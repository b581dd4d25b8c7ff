"""Packet-to-flow assembly and flow featurization.

Flows are keyed by the bidirectional five-tuple (sorted endpoint pair plus
protocol); a silence longer than the idle timeout splits a key into separate
flows. Featurization emits a fixed 30-column vector covering four families:
packet counts/rates, byte volumes and size statistics, timing, and
protocol/TCP-flag information. The column order is frozen in FEATURE_NAMES.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10
TCP_URG = 0x20

PACKET_CSV_HEADER = ["ts", "src_ip", "dst_ip", "src_port", "dst_port", "proto", "bytes", "tcp_flags"]

# frozen native schema; indices are part of the flow-CSV contract
FEATURE_NAMES = [
    # packet-based
    "pkt_count_total", "pkt_count_fwd", "pkt_count_bwd",
    "pkts_per_sec", "pkts_per_sec_fwd", "pkts_per_sec_bwd",
    # byte-based
    "bytes_total", "bytes_fwd", "bytes_bwd",
    "bytes_per_sec", "bytes_per_sec_fwd", "bytes_per_sec_bwd",
    "pkt_size_mean", "pkt_size_std", "pkt_size_min", "pkt_size_max",
    # time-based
    "duration", "iat_mean", "iat_std", "iat_min", "iat_max",
    # protocol-based
    "proto_tcp", "proto_udp", "proto_icmp",
    "flag_syn", "flag_ack", "flag_fin", "flag_rst", "flag_psh", "flag_urg",
]

DEFAULT_IDLE_TIMEOUT = 64.0


@dataclass
class PacketRecord:
    """One packet-header record; payload content is never inspected."""

    ts: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: str  # TCP / UDP / ICMP / OTHER
    payload_bytes: int
    tcp_flags: int = 0  # zero for non-TCP

    def endpoints(self) -> tuple[tuple[str, int], tuple[str, int]]:
        return (self.src_ip, self.src_port), (self.dst_ip, self.dst_port)


@dataclass
class Flow:
    """Packets sharing a bidirectional five-tuple within the idle timeout."""

    key: tuple
    packets: list[PacketRecord]
    fwd_endpoint: tuple[str, int]  # source of the first packet

    @property
    def first_ts(self) -> float:
        return self.packets[0].ts

    @property
    def last_ts(self) -> float:
        return self.packets[-1].ts


@dataclass
class FlowRecord:
    """Fixed-width feature vector with an optional class label."""

    features: np.ndarray
    label: int = -1
    class_name: str = ""


def flow_key(pkt: PacketRecord) -> tuple:
    a, b = pkt.endpoints()
    lo, hi = (a, b) if a <= b else (b, a)
    return (lo, hi, pkt.protocol)


def assemble_flows(packets: list[PacketRecord], idle_timeout: float = DEFAULT_IDLE_TIMEOUT) -> list[Flow]:
    """Group packets into bidirectional flows, splitting on idle gaps."""
    ordered = sorted(packets, key=lambda p: p.ts)
    active: dict[tuple, Flow] = {}
    done: list[Flow] = []
    for pkt in ordered:
        key = flow_key(pkt)
        flow = active.get(key)
        if flow is not None and pkt.ts - flow.last_ts > idle_timeout:
            done.append(flow)
            flow = None
        if flow is None:
            flow = Flow(key, [], pkt.endpoints()[0])
            active[key] = flow
        flow.packets.append(pkt)
    done.extend(active.values())
    done.sort(key=lambda f: (f.first_ts, f.key))
    return done


def featurize_flow(flow: Flow) -> FlowRecord:
    """30-feature vector per FEATURE_NAMES; zero-duration rates equal totals."""
    sizes = np.array([p.payload_bytes for p in flow.packets], dtype=np.float64)
    is_fwd = np.array([p.endpoints()[0] == flow.fwd_endpoint for p in flow.packets])
    n = len(flow.packets)
    n_fwd = int(is_fwd.sum())
    n_bwd = n - n_fwd
    total_bytes = float(sizes.sum())
    fwd_bytes = float(sizes[is_fwd].sum())
    bwd_bytes = total_bytes - fwd_bytes
    duration = flow.last_ts - flow.first_ts

    def rate(total: float) -> float:
        return total / duration if duration > 0 else total

    ts = np.array([p.ts for p in flow.packets])
    iats = np.diff(ts)
    if len(iats) == 0:
        iat_stats = (0.0, 0.0, 0.0, 0.0)
    else:
        iat_stats = (float(iats.mean()), float(iats.std()), float(iats.min()), float(iats.max()))

    proto = flow.key[2].upper()
    flag_counts = [
        sum(1 for p in flow.packets if p.tcp_flags & bit)
        for bit in (TCP_SYN, TCP_ACK, TCP_FIN, TCP_RST, TCP_PSH, TCP_URG)
    ]

    features = np.array(
        [
            n, n_fwd, n_bwd,
            rate(float(n)), rate(float(n_fwd)), rate(float(n_bwd)),
            total_bytes, fwd_bytes, bwd_bytes,
            rate(total_bytes), rate(fwd_bytes), rate(bwd_bytes),
            float(sizes.mean()), float(sizes.std()), float(sizes.min()), float(sizes.max()),
            duration, *iat_stats,
            1.0 if proto == "TCP" else 0.0,
            1.0 if proto == "UDP" else 0.0,
            1.0 if proto == "ICMP" else 0.0,
            *[float(c) for c in flag_counts],
        ],
        dtype=np.float64,
    )
    assert features.shape == (len(FEATURE_NAMES),)
    return FlowRecord(features)


def load_packet_csv(path) -> list[PacketRecord]:
    """Read the packet-record CSV (tcp_flags column is a hex byte)."""
    packets = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != PACKET_CSV_HEADER:
            raise SchemaError(
                f"packet CSV header must be {','.join(PACKET_CSV_HEADER)}, got {reader.fieldnames}"
            )
        for row in reader:
            try:
                packets.append(
                    PacketRecord(
                        ts=float(row["ts"]),
                        src_ip=row["src_ip"],
                        dst_ip=row["dst_ip"],
                        src_port=int(row["src_port"]),
                        dst_port=int(row["dst_port"]),
                        protocol=row["proto"].upper(),
                        payload_bytes=int(row["bytes"]),
                        tcp_flags=int(row["tcp_flags"], 16),
                    )
                )
            except (ValueError, KeyError) as exc:
                raise SchemaError(f"bad packet row {row}: {exc}") from exc
    return packets


def write_packet_csv(packets: list[PacketRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PACKET_CSV_HEADER)
        for p in packets:
            writer.writerow(
                [repr(p.ts), p.src_ip, p.dst_ip, p.src_port, p.dst_port,
                 p.protocol, p.payload_bytes, f"0x{p.tcp_flags:02x}"]
            )
