import numpy as np
import pytest

from fedcil.errors import SchemaError
from fedcil.flows import (FEATURE_NAMES, PacketRecord, assemble_flows, featurize_flow,
                          flow_key, load_packet_csv, write_packet_csv)


def pkt(ts, src, sport, dst, dport, proto="TCP", size=100, flags=0):
    return PacketRecord(ts, src, dst, sport, dport, proto, size, flags)


def feature(vec, name):
    return vec[FEATURE_NAMES.index(name)]


def test_single_packet_single_flow():
    flows = assemble_flows([pkt(1.0, "10.0.0.1", 1234, "10.0.0.2", 80)])
    assert len(flows) == 1 and len(flows[0].packets) == 1


def test_gap_beyond_timeout_splits_flow():
    packets = [pkt(0.0, "a", 1, "b", 2), pkt(100.0, "a", 1, "b", 2)]
    assert len(assemble_flows(packets, idle_timeout=64.0)) == 2
    # exactly at the timeout boundary the flow stays open
    packets = [pkt(0.0, "a", 1, "b", 2), pkt(64.0, "a", 1, "b", 2)]
    assert len(assemble_flows(packets, idle_timeout=64.0)) == 1


def test_bidirectional_packets_share_a_flow():
    packets = [pkt(0.0, "a", 1, "b", 2), pkt(0.1, "b", 2, "a", 1)]
    flows = assemble_flows(packets)
    assert len(flows) == 1 and len(flows[0].packets) == 2
    assert flow_key(packets[0]) == flow_key(packets[1])


def test_interleaved_keys_match_bruteforce_grouping():
    keys = [("10.0.0.1", 10, "10.0.0.9", 80, "TCP"),
            ("10.0.0.2", 20, "10.0.0.9", 80, "UDP"),
            ("10.0.0.3", 30, "10.0.0.9", 53, "UDP")]
    packets = []
    for i in range(9):
        s, sp, d, dp, proto = keys[i % 3]
        packets.append(pkt(0.1 * i, s, sp, d, dp, proto))
    flows = assemble_flows(packets)
    assert len(flows) == 3
    # independent grouping oracle
    expected = {}
    for p in packets:
        expected.setdefault(flow_key(p), []).append(p)
    by_key = {f.key: f for f in flows}
    assert set(by_key) == set(expected)
    for key, plist in expected.items():
        assert len(by_key[key].packets) == len(plist)
    assert sum(len(f.packets) for f in flows) == len(packets)
    # deterministic ordering by first timestamp
    assert [f.first_ts for f in flows] == sorted(f.first_ts for f in flows)


def test_unsorted_input_is_sorted_internally():
    packets = [pkt(5.0, "a", 1, "b", 2), pkt(0.0, "a", 1, "b", 2)]
    flows = assemble_flows(packets)
    assert len(flows) == 1
    assert [p.ts for p in flows[0].packets] == [0.0, 5.0]


# ---------------------------------------------------------------- featurize

def test_featurize_single_udp_packet():
    flow = assemble_flows([pkt(3.0, "a", 1, "b", 2, proto="UDP", size=100)])[0]
    v = featurize_flow(flow).features
    assert v.shape == (len(FEATURE_NAMES),)
    assert feature(v, "duration") == 0.0
    assert feature(v, "pkt_count_total") == 1
    assert feature(v, "bytes_total") == 100
    # zero-duration rates fall back to raw totals
    assert feature(v, "pkts_per_sec") == 1
    assert feature(v, "bytes_per_sec") == 100
    assert feature(v, "proto_udp") == 1 and feature(v, "proto_tcp") == 0
    for name in ("flag_syn", "flag_ack", "flag_fin", "flag_rst", "flag_psh", "flag_urg"):
        assert feature(v, name) == 0


def test_featurize_two_packet_hand_arithmetic():
    packets = [pkt(0.0, "a", 1, "b", 2, size=100), pkt(1.0, "a", 1, "b", 2, size=100)]
    v = featurize_flow(assemble_flows(packets)[0]).features
    assert feature(v, "duration") == 1.0
    assert feature(v, "bytes_per_sec") == 200.0
    assert feature(v, "iat_mean") == 1.0
    assert feature(v, "iat_std") == 0.0


def test_featurize_five_packet_tcp_fixture_hand_computed():
    # A:1000 <-> B:80; sizes and flags chosen to exercise every family
    A, B = "10.0.0.1", "10.0.0.9"
    packets = [
        pkt(0.0, A, 1000, B, 80, size=40, flags=0x02),    # SYN
        pkt(0.1, B, 80, A, 1000, size=44, flags=0x12),    # SYN|ACK
        pkt(0.3, A, 1000, B, 80, size=52, flags=0x10),    # ACK
        pkt(0.7, A, 1000, B, 80, size=1500, flags=0x18),  # PSH|ACK
        pkt(1.5, B, 80, A, 1000, size=60, flags=0x11),    # FIN|ACK
    ]
    flows = assemble_flows(packets)
    assert len(flows) == 1
    v = featurize_flow(flows[0]).features

    sizes = [40, 44, 52, 1500, 60]
    mean = sum(sizes) / 5
    var = sum((s - mean) ** 2 for s in sizes) / 5
    iats = [0.1, 0.2, 0.4, 0.8]
    iat_mean = sum(iats) / 4
    iat_var = sum((t - iat_mean) ** 2 for t in iats) / 4
    expected = {
        "pkt_count_total": 5, "pkt_count_fwd": 3, "pkt_count_bwd": 2,
        "pkts_per_sec": 5 / 1.5, "pkts_per_sec_fwd": 3 / 1.5, "pkts_per_sec_bwd": 2 / 1.5,
        "bytes_total": 1696, "bytes_fwd": 40 + 52 + 1500, "bytes_bwd": 44 + 60,
        "bytes_per_sec": 1696 / 1.5, "bytes_per_sec_fwd": 1592 / 1.5,
        "bytes_per_sec_bwd": 104 / 1.5,
        "pkt_size_mean": mean, "pkt_size_std": np.sqrt(var),
        "pkt_size_min": 40, "pkt_size_max": 1500,
        "duration": 1.5, "iat_mean": iat_mean, "iat_std": np.sqrt(iat_var),
        "iat_min": 0.1, "iat_max": 0.8,
        "proto_tcp": 1, "proto_udp": 0, "proto_icmp": 0,
        "flag_syn": 2, "flag_ack": 4, "flag_fin": 1,
        "flag_rst": 0, "flag_psh": 1, "flag_urg": 0,
    }
    assert set(expected) == set(FEATURE_NAMES)
    for name, want in expected.items():
        assert feature(v, name) == pytest.approx(want, rel=1e-12), name


def test_feature_width_constant_and_finite():
    rng = np.random.default_rng(0)
    packets = []
    for i in range(60):
        proto = ["TCP", "UDP", "ICMP"][i % 3]
        packets.append(pkt(float(rng.uniform(0, 30)), f"10.0.{i % 5}.1",
                           int(rng.integers(1, 2000)) if proto != "ICMP" else 0,
                           "10.9.9.9", 80 if proto != "ICMP" else 0,
                           proto=proto, size=int(rng.integers(40, 1500)),
                           flags=int(rng.integers(0, 64)) if proto == "TCP" else 0))
    for f in assemble_flows(packets):
        v = featurize_flow(f).features
        assert v.shape == (len(FEATURE_NAMES),)
        assert np.all(np.isfinite(v))


# ---------------------------------------------------------------- packet CSV

def test_packet_csv_roundtrip(tmp_path):
    packets = [
        pkt(0.25, "10.0.0.1", 1000, "10.0.0.2", 80, proto="TCP", size=40, flags=0x12),
        pkt(1.5, "10.0.0.3", 0, "10.0.0.2", 0, proto="ICMP", size=64, flags=0),
    ]
    path = tmp_path / "packets.csv"
    write_packet_csv(packets, path)
    back = load_packet_csv(path)
    assert len(back) == 2
    assert back[0].ts == 0.25 and back[0].tcp_flags == 0x12
    assert back[1].protocol == "ICMP" and back[1].src_port == 0


def test_packet_csv_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,src,dst\n1,a,b\n")
    with pytest.raises(SchemaError):
        load_packet_csv(path)
