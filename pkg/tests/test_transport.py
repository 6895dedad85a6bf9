"""Framing, metering, delivery order, and backend equivalence."""

import threading

import numpy as np
import pytest

from authpsi import harness, transport
from authpsi.errors import TransportClosed, TransportError
from authpsi.transport import Envelope

SID = b"\xaa" * 16


def test_envelope_frame_roundtrip():
    env = Envelope(SID, 0x42, b"hello world")
    frame = env.to_frame()
    assert int.from_bytes(frame[:4], "big") == len(frame) - 4
    back = Envelope.from_body(frame[4:])
    assert back == env
    assert env.wire_bytes == 25 + 11


def test_envelope_validation():
    with pytest.raises(ValueError):
        Envelope(b"\x00" * 8, 0x01, b"")
    with pytest.raises(ValueError):
        Envelope(SID, 0x100, b"")


def test_meter_header_arithmetic():
    net = transport.BusNetwork()
    a, b = net.node(1), net.node(2)
    a.send(2, Envelope(SID, 0x01, b"\x00" * 100))
    assert net.meter.protocol_bytes(SID) == 125  # payload + 25 header bytes
    assert net.meter.setup_bytes(SID) == 0
    assert net.meter.per_type(SID) == {"0x01": 125}


def test_dealer_traffic_is_setup_bytes():
    net = transport.BusNetwork()
    net.node(0)
    a = net.node(1)
    a.send(0, Envelope(SID, 0x21, b"\x00" * 10))
    assert net.meter.protocol_bytes(SID) == 0
    assert net.meter.setup_bytes(SID) == 35


def test_meter_conservation():
    net = transport.BusNetwork()
    net.node(1), net.node(2)
    sizes = [3, 50, 7, 0]
    for i, size in enumerate(sizes):
        net.node(1).send(2, Envelope(SID, i + 1, b"\x01" * size))
    assert sum(net.meter.per_type(SID).values()) == net.meter.protocol_bytes(SID)


def test_bus_fifo_order_and_exactly_once():
    net = transport.BusNetwork()
    a, b = net.node(1), net.node(2)
    for i in range(10_000):
        a.send(2, Envelope(SID, 0x01, i.to_bytes(4, "big")))
    for i in range(10_000):
        src, env = b.recv(timeout=0.1)
        assert src == 1
        assert int.from_bytes(env.payload, "big") == i
    assert b.recv(timeout=0.01) is None


def test_abort_not_reordered():
    # strict FIFO: an abort queued behind data does not jump the queue
    net = transport.BusNetwork()
    a, b = net.node(1), net.node(2)
    a.send(2, Envelope(SID, 0x02, b"data"))
    a.send(2, Envelope(SID, 0x0F, b"abort"))
    assert b.recv(timeout=0.1)[1].msg_type == 0x02
    assert b.recv(timeout=0.1)[1].msg_type == 0x0F


def test_bus_timeout_vs_closed():
    net = transport.BusNetwork()
    a, b = net.node(1), net.node(2)
    assert b.recv(timeout=0.01) is None  # timeout is a value
    a.close()
    with pytest.raises(TransportClosed):
        b.recv(timeout=0.1)
    with pytest.raises(TransportError):
        a.send(2, Envelope(SID, 0x01, b""))


def test_tcp_roundtrip_and_meter():
    n1 = transport.TcpNode(1, ("127.0.0.1", 0), {})
    n2 = transport.TcpNode(2, ("127.0.0.1", 0), {1: ("127.0.0.1", n1.bound_port)})
    try:
        n2.send(1, Envelope(SID, 0x07, b"over tcp"))
        src, env = n1.recv(timeout=5)
        assert (src, env.payload) == (2, b"over tcp")
        # both ends metered the same direction key
        assert n1.meter.protocol_bytes(SID) == n2.meter.protocol_bytes(SID) == 33
        for i in range(100):
            n2.send(1, Envelope(SID, 0x08, bytes([i])))
        got = [n1.recv(timeout=5)[1].payload[0] for _ in range(100)]
        assert got == list(range(100))
    finally:
        n1.close()
        n2.close()


def test_tcp_unreachable_peer():
    n = transport.TcpNode(1, None, {2: ("127.0.0.1", 1)})  # nothing listens there
    try:
        with pytest.raises(TransportError):
            n._connection(2, retry_for=0.2)
    finally:
        n.close()


def test_backends_produce_identical_transcripts():
    # same seeds, same session: bus and TCP runs must exchange byte-identical
    # per-pair message sequences
    x = [bytes([i, 1]) for i in range(24)]
    y = [bytes([i, 1]) for i in range(12, 36)]
    session = b"\x33" * 16

    bus_run = harness.run_two_party(x, y, session_id=session, seed=5)

    from authpsi import merkle, psi2
    salt = session
    roots = {1: merkle.root(x, salt), 2: merkle.root(y, salt)}
    master = np.random.default_rng(5)
    rngs = {i: np.random.default_rng(master.integers(1 << 62)) for i in (1, 2)}
    dealer_rng = np.random.default_rng(master.integers(1 << 62))

    cfg1 = psi2.PartyConfig2(role=psi2.RECEIVER, party_index=1, peer_index=2, input_set=x,
                             session_id=session, announced_root=roots[1], peer_root=roots[2])
    cfg2 = psi2.PartyConfig2(role=psi2.SENDER, party_index=2, peer_index=1, input_set=y,
                             session_id=session, announced_root=roots[2], peer_root=roots[1])
    engines = {1: psi2.Psi2Engine(cfg1, rng=rngs[1]), 2: psi2.Psi2Engine(cfg2, rng=rngs[2])}

    nodes = {}
    nodes[0] = transport.TcpNode(0, ("127.0.0.1", 0), {})
    addr0 = ("127.0.0.1", nodes[0].bound_port)
    nodes[1] = transport.TcpNode(1, ("127.0.0.1", 0), {0: addr0})
    nodes[2] = transport.TcpNode(2, ("127.0.0.1", 0), {0: addr0})
    nodes[1]._peers[2] = ("127.0.0.1", nodes[2].bound_port)
    nodes[2]._peers[1] = ("127.0.0.1", nodes[1].bound_port)
    nodes[0]._peers = {1: ("127.0.0.1", nodes[1].bound_port),
                       2: ("127.0.0.1", nodes[2].bound_port)}

    threads = [
        threading.Thread(target=harness.drive_engine, args=(engines[1], nodes[1])),
        threading.Thread(target=harness.drive_engine, args=(engines[2], nodes[2])),
        threading.Thread(target=harness.serve_dealer, args=(nodes[0],),
                         kwargs={"idle_timeout": 1.0, "rng": dealer_rng}),
    ]
    try:
        for th in threads:
            th.start()
        for th in threads[:2]:
            th.join(timeout=30)
    finally:
        for node in nodes.values():
            node.close()

    assert engines[1].intersection == bus_run.intersection
    tcp_pairs = {}
    for node in nodes.values():
        for pair, seq in node.transcript.per_pair().items():
            tcp_pairs.setdefault(pair, []).extend(seq)
    bus_pairs = bus_run.transcript.per_pair()
    assert set(tcp_pairs) == set(bus_pairs)
    for pair in bus_pairs:
        assert tcp_pairs[pair] == bus_pairs[pair], pair
