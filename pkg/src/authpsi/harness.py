"""Session orchestration: wiring engines, dealers, and tamper injection.

The single-process driver runs every party over the in-process bus with one
global FIFO, which keeps runs reproducible under fixed seeds. Adversarial
runs install a tamper on one party; tampering either swaps the party's real
inputs out from under its announced commitment (flip-element, extra-element)
or mutates its outgoing proof payload (flip-path, swap-proofs). Honest
parties are expected to abort in every tampered run.
"""

from __future__ import annotations

import secrets
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import merkle, opprf, psi2, psin, transport, vole
from .errors import ProtocolError
from .psi2 import decode_root_proofs, encode_root_proofs


@dataclass(frozen=True)
class Tamper:
    """One adversarial move by one party, applied after commitments are fixed."""
    kind: str  # flip-element | flip-path | swap-proofs | extra-element
    party: int
    index: int = 0
    index2: int = 1

    _KINDS = ("flip-element", "flip-path", "swap-proofs", "extra-element")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown tamper kind {self.kind!r}")

    @classmethod
    def parse(cls, spec: str, party: int) -> "Tamper":
        """Parse CLI syntax like flip-element:17 or swap-proofs:1,5."""
        kind, _, rest = spec.partition(":")
        if kind == "swap-proofs":
            a, _, b = rest.partition(",")
            return cls(kind=kind, party=party, index=int(a), index2=int(b))
        if kind == "extra-element":
            return cls(kind=kind, party=party)
        return cls(kind=kind, party=party, index=int(rest))


@dataclass
class RunResult:
    intersection: Optional[set[bytes]]
    aborted: bool
    abort_parties: list[int]
    report: dict
    transcript: transport.Transcript
    elapsed_ms: float


class DealerService:
    """Party 0: serves VOLE correlations and ideal-OPRF keys/evaluations."""

    def __init__(self, rng: Optional[np.random.Generator] = None):
        self.rng = rng if rng is not None else np.random.default_rng(secrets.randbits(128))
        self.vole = vole.VoleDealer(rng=self.rng)
        self.oprf = opprf.OprfDealer(rng=self.rng)

    def handle(self, src: int, env: transport.Envelope) -> list:
        if env.msg_type == vole.MSG_VOLE_REQUEST:
            sid, role, length, _ = vole.decode_dealer_msg(env.payload)
            payload = self.vole.request(sid, role, length)
            return [(src, transport.Envelope(env.session_id, vole.MSG_VOLE_MATERIAL, payload))]
        if env.msg_type == opprf.MSG_OPRF_DEALER:
            subtype, session, body = opprf.decode_dealer_payload(env.payload)
            if subtype == opprf.OPRF_KEY_REQUEST:
                payload = opprf.encode_key_response(session, self.oprf.key(session))
                return [(src, transport.Envelope(env.session_id, opprf.MSG_OPRF_DEALER, payload))]
            if subtype == opprf.OPRF_EVAL_REQUEST:
                values = self.oprf.evaluate(session, body)
                payload = opprf.encode_eval_response(session, values)
                return [(src, transport.Envelope(env.session_id, opprf.MSG_OPRF_DEALER, payload))]
        raise ProtocolError(f"dealer cannot serve message type {env.msg_type:#x}")


def _mutate_proof_payload(payload: bytes, tamper: Tamper) -> bytes:
    """flip-path / swap-proofs act on the outgoing root+proofs message."""
    root, proofs = decode_root_proofs(payload)
    if tamper.kind == "flip-path":
        target = proofs[tamper.index % len(proofs)]
        if target.siblings:
            side, digest = target.siblings[0]
            digest = bytes([digest[0] ^ 0x01]) + digest[1:]
            siblings = ((side, digest),) + target.siblings[1:]
            mutated = merkle.InclusionProof(index=target.index, leaf_hash=target.leaf_hash,
                                            siblings=siblings, set_size=target.set_size)
        else:
            flipped = bytes([target.leaf_hash[0] ^ 0x01]) + target.leaf_hash[1:]
            mutated = merkle.InclusionProof(index=target.index, leaf_hash=flipped,
                                            siblings=target.siblings, set_size=target.set_size)
        proofs[tamper.index % len(proofs)] = mutated
    elif tamper.kind == "swap-proofs":
        a = tamper.index % len(proofs)
        b = tamper.index2 % len(proofs)
        if a == b:
            b = (b + 1) % len(proofs)
        pa, pb = proofs[a], proofs[b]
        proofs[a] = merkle.InclusionProof(index=pb.index, leaf_hash=pa.leaf_hash,
                                          siblings=pa.siblings, set_size=pa.set_size)
        proofs[b] = merkle.InclusionProof(index=pa.index, leaf_hash=pb.leaf_hash,
                                          siblings=pb.siblings, set_size=pb.set_size)
    return encode_root_proofs(root, proofs)


def _tampered_inputs(elements: list[bytes], tamper: Tamper) -> list[bytes]:
    """flip-element / extra-element act on the party's actual inputs."""
    out = list(elements)
    if tamper.kind == "flip-element":
        i = tamper.index % len(out)
        for bit in range(8 * len(out[i])):
            flipped = bytearray(out[i])
            flipped[bit // 8] ^= 1 << (bit % 8)
            flipped = bytes(flipped)
            if flipped not in out:
                out[i] = flipped
                break
    elif tamper.kind == "extra-element":
        extra = secrets.token_bytes(max(1, len(out[0])))
        while extra in out:
            extra = secrets.token_bytes(max(1, len(out[0])))
        out.append(extra)
    return out


def _pump(net: transport.BusNetwork, handlers: dict, initial: list,
          tolerate: Optional[int] = None) -> None:
    """Single global FIFO delivery until all engines go quiet.

    Exceptions raised by the tolerated (tampered) party are swallowed: an
    adversary that trips over honest traffic simply stops participating,
    and the run's outcome is judged by the honest engines alone.
    """
    queue: list[tuple[int, int, transport.Envelope]] = []

    def push(src: int, outs):
        for dst, env in outs:
            queue.append((src, dst, env))

    for src, outs in initial:
        push(src, outs)
    while queue:
        src, dst, env = queue.pop(0)
        net.node(src).send(dst, env)
        got = net.node(dst).recv(timeout=0.001)
        assert got is not None
        real_src, delivered = got
        try:
            outs = handlers[dst](real_src, delivered)
        except ProtocolError:
            if dst != tolerate:
                raise
            outs = []
        push(dst, outs)


def run_two_party(receiver_set: list[bytes], sender_set: list[bytes], *,
                  session_id: Optional[bytes] = None, salted: bool = True,
                  tamper: Optional[Tamper] = None, seed: Optional[int] = None,
                  network: Optional[transport.BusNetwork] = None,
                  announced_roots: Optional[dict[int, merkle.MerkleRoot]] = None) -> RunResult:
    """One full two-party session over the in-process bus."""
    master = np.random.default_rng(seed if seed is not None else secrets.randbits(128))
    session = session_id if session_id is not None else master.bytes(16)
    salt = session if salted else b""

    sets = {1: list(receiver_set), 2: list(sender_set)}
    roots = announced_roots if announced_roots is not None else {
        i: merkle.root(s, salt) for i, s in sets.items()}
    tampered_party = tamper.party if tamper else None
    if tamper and tamper.kind in ("flip-element", "extra-element"):
        sets[tamper.party] = _tampered_inputs(sets[tamper.party], tamper)

    configs = {
        1: psi2.PartyConfig2(role=psi2.RECEIVER, party_index=1, peer_index=2,
                             input_set=sets[1], session_id=session,
                             announced_root=roots[1], peer_root=roots[2], salted=salted,
                             skip_self_check=(tampered_party == 1)),
        2: psi2.PartyConfig2(role=psi2.SENDER, party_index=2, peer_index=1,
                             input_set=sets[2], session_id=session,
                             announced_root=roots[2], peer_root=roots[1], salted=salted,
                             skip_self_check=(tampered_party == 2)),
    }
    engines = {i: psi2.Psi2Engine(configs[i], rng=np.random.default_rng(master.integers(1 << 62)))
               for i in (1, 2)}
    dealer = DealerService(rng=np.random.default_rng(master.integers(1 << 62)))

    net = network if network is not None else transport.BusNetwork()
    for i in (0, 1, 2):
        net.node(i)

    def party_handler(i):
        def handle(src, env):
            return engines[i].handle(src, env)
        return handle

    handlers = {0: dealer.handle, 1: party_handler(1), 2: party_handler(2)}

    def tamper_outs(i, outs):
        if tamper and i == tamper.party and tamper.kind in ("flip-path", "swap-proofs"):
            fixed = []
            for dst, env in outs:
                if env.msg_type == psi2.MSG_ROOT_PROOFS:
                    env = transport.Envelope(env.session_id, env.msg_type,
                                             _mutate_proof_payload(env.payload, tamper))
                fixed.append((dst, env))
            return fixed
        return outs

    t0 = time.perf_counter()
    initial = [(i, tamper_outs(i, engines[i].start())) for i in (1, 2)]
    _pump(net, handlers, initial, tolerate=tampered_party)
    elapsed = (time.perf_counter() - t0) * 1000

    honest = [i for i in (1, 2) if i != tampered_party]
    aborted = any(engines[i].aborted for i in honest)
    report = transport.make_report(
        net.meter, session_id=session, n=len(receiver_set), parties=2, t=None,
        phase_ms=engines[1].phase_ms, aborted=aborted)
    return RunResult(intersection=engines[1].intersection, aborted=aborted,
                     abort_parties=[i for i in (1, 2) if engines[i].aborted],
                     report=report, transcript=net.transcript, elapsed_ms=elapsed)


def run_multi_party(input_sets: list[list[bytes]], t: int, *,
                    session_id: Optional[bytes] = None, salted: bool = True,
                    tamper: Optional[Tamper] = None, seed: Optional[int] = None,
                    network: Optional[transport.BusNetwork] = None,
                    announced_roots: Optional[dict[int, merkle.MerkleRoot]] = None) -> RunResult:
    """One full n-party session over the in-process bus; output lands at P_n."""
    n = len(input_sets)
    master = np.random.default_rng(seed if seed is not None else secrets.randbits(128))
    session = session_id if session_id is not None else master.bytes(16)
    salt = session if salted else b""

    sets = {i + 1: list(s) for i, s in enumerate(input_sets)}
    roots = announced_roots if announced_roots is not None else {
        i: merkle.root(s, salt) for i, s in sets.items()}
    tampered_party = tamper.party if tamper else None
    if tamper and tamper.kind in ("flip-element", "extra-element"):
        sets[tamper.party] = _tampered_inputs(sets[tamper.party], tamper)

    configs = {
        i: psin.PartyConfigN(n=n, t=t, party_index=i, input_set=sets[i],
                             session_id=session, roots=roots, salted=salted,
                             skip_self_check=(tampered_party == i))
        for i in range(1, n + 1)
    }
    engines = {i: psin.PsinEngine(configs[i], rng=np.random.default_rng(master.integers(1 << 62)))
               for i in range(1, n + 1)}
    dealer = DealerService(rng=np.random.default_rng(master.integers(1 << 62)))

    net = network if network is not None else transport.BusNetwork()
    for i in range(0, n + 1):
        net.node(i)

    handlers = {0: dealer.handle}
    for i in range(1, n + 1):
        handlers[i] = (lambda j: lambda src, env: engines[j].handle(src, env))(i)

    def tamper_outs(i, outs):
        if tamper and i == tamper.party and tamper.kind in ("flip-path", "swap-proofs"):
            fixed = []
            for dst, env in outs:
                if env.msg_type == psin.MSG_ROOT_PROOFS:
                    env = transport.Envelope(env.session_id, env.msg_type,
                                             _mutate_proof_payload(env.payload, tamper))
                fixed.append((dst, env))
            return fixed
        return outs

    t0 = time.perf_counter()
    initial = [(i, tamper_outs(i, engines[i].start())) for i in range(1, n + 1)]
    _pump(net, handlers, initial, tolerate=tampered_party)
    elapsed = (time.perf_counter() - t0) * 1000

    honest = [i for i in range(1, n + 1) if i != tampered_party]
    aborted = any(engines[i].aborted for i in honest)
    report = transport.make_report(
        net.meter, session_id=session, n=len(input_sets[0]), parties=n, t=t,
        phase_ms=engines[n].phase_ms, aborted=aborted)
    return RunResult(intersection=engines[n].intersection, aborted=aborted,
                     abort_parties=[i for i in honest if engines[i].aborted],
                     report=report, transcript=net.transcript, elapsed_ms=elapsed)


def drive_engine(engine, node, *, timeout: float = 30.0,
                 mutate_outbound=None) -> None:
    """Run one engine over a live endpoint until it reaches a terminal state.

    Used by the networked CLI mode, one process per party. Send failures are
    tolerated while aborting (the peer may be gone already), and a peer that
    hangs up after finishing its part is not an error: only a timeout while
    traffic is still owed counts as a transport failure.
    """
    from .errors import TransportClosed, TransportError

    def flush(outs):
        for dst, env in outs:
            if mutate_outbound is not None:
                env = mutate_outbound(env)
            try:
                node.send(dst, env)
            except TransportError:
                if not engine.aborted:
                    raise

    flush(engine.start())
    while not engine.done:
        try:
            got = node.recv(timeout=timeout)
        except TransportClosed:
            continue
        if got is None:
            raise TransportError("timed out waiting for protocol traffic")
        src, env = got
        flush(engine.handle(src, env))


def serve_dealer(node, *, idle_timeout: float = 10.0,
                 rng: Optional[np.random.Generator] = None) -> int:
    """Dealer process main loop: answer requests until traffic goes idle.

    Clients hanging up after a finished session is normal, not an error.
    """
    from .errors import TransportClosed

    dealer = DealerService(rng=rng)
    served = 0
    while True:
        try:
            got = node.recv(timeout=idle_timeout)
        except TransportClosed:
            continue
        if got is None:
            return served
        src, env = got
        for dst, out in dealer.handle(src, env):
            node.send(dst, out)
            served += 1
