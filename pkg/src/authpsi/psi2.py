"""Two-party authenticated set intersection over committed inputs.

Both parties publish a commitment (tree root) to their input set before the
session. The run then has three phases:

- transform: each party re-derives its own root (refusing to start if its
  inputs drifted from the commitment), generates inclusion proofs for every
  element, and the receiver additionally encodes its set into an oblivious
  table P mapping x -> HB(x).
- interact: each side checks every received proof against the peer's
  pre-announced root and aborts the session on any failure. Both sides then
  draw a correlation (A, C) / (B, delta) with C = A*delta + B from the dealer.
  The receiver sends the masked table A' = A + P; the sender folds it into
  B' = B + A'*delta and answers with the digest set
  R = { Ho( Decode(B', y) + delta*HB(y) ) | y in Y }, randomly permuted.
- reconstruct: the receiver computes R' = { Ho( Decode(C, x) ) | x in X } and
  outputs the elements whose digest lands in R.

For a common element the masks cancel exactly: Decode(B', x) + delta*HB(x)
equals Decode(C, x) by linearity of decoding, so matching digests identify
the intersection while everything else stays masked by the correlation.
Digests are truncated to cover the statistical collision budget for the two
set sizes.

Leaf hashes inside proofs are salted with the session id by default so that
proofs from different sessions cannot be linked by dictionary attack; the
commitment must then be per-session as well. `salted=False` restores plain
leaf hashing.
"""

from __future__ import annotations

import hashlib
import math
import secrets
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import gf, merkle, okvs, vole
from .errors import ConfigError, ProtocolError

MSG_ROOT_PROOFS = 0x01
MSG_MASKED_VECTOR = 0x02
MSG_DIGEST_SET = 0x03
MSG_ABORT = 0x0F

LAMBDA_STAT = 40
KAPPA = 128

MAX_ENCODE_ATTEMPTS = 16

_HB_TAG = b"\x42"
_HO_TAG = b"\x4f"

RECEIVER = "receiver"
SENDER = "sender"


def hash_to_mask(x: bytes) -> int:
    """HB: hash an element into the 128-bit mask range of the oblivious table."""
    return int.from_bytes(hashlib.sha256(_HB_TAG + x).digest()[:16], "little")


def output_digest(value: int, out_bytes: int) -> bytes:
    """Ho: truncated digest of a field element, out_bytes wide."""
    return hashlib.sha256(_HO_TAG + gf.to_bytes(value)).digest()[:out_bytes]


def digest_width(n_x: int, n_y: int, lambda_stat: int = LAMBDA_STAT) -> int:
    """Bytes needed so collisions stay within the statistical budget."""
    bits = lambda_stat + max(1, math.ceil(math.log2(n_x * n_y)))
    return math.ceil(bits / 8)


def okvs_length(n_x: int) -> int:
    """Table length for a receiver set size; both parties derive it identically."""
    return okvs.OkvsParams.for_size(n_x, bytes(okvs.SEED_BYTES)).m


@dataclass
class PartyConfig2:
    role: str
    party_index: int
    peer_index: int
    input_set: list[bytes]
    session_id: bytes
    announced_root: merkle.MerkleRoot
    peer_root: merkle.MerkleRoot
    lambda_stat: int = LAMBDA_STAT
    kappa: int = KAPPA
    salted: bool = True
    # harness knob for adversarial runs: skip the local commitment re-check
    skip_self_check: bool = False

    def __post_init__(self):
        if self.role not in (RECEIVER, SENDER):
            raise ConfigError(f"unknown role {self.role!r}")
        if not self.input_set:
            raise ConfigError("input set must be nonempty")
        if len(set(self.input_set)) != len(self.input_set):
            raise ConfigError("input set must contain distinct elements")
        if len(self.session_id) != 16:
            raise ConfigError("session id must be 16 bytes")

    @property
    def leaf_salt(self) -> bytes:
        return self.session_id if self.salted else b""

    @property
    def n_own(self) -> int:
        return len(self.input_set)

    @property
    def n_peer(self) -> int:
        return self.peer_root.set_size

    @property
    def out_bytes(self) -> int:
        n_x = self.n_own if self.role == RECEIVER else self.n_peer
        n_y = self.n_peer if self.role == RECEIVER else self.n_own
        return digest_width(n_x, n_y, self.lambda_stat)


def encode_root_proofs(root: merkle.MerkleRoot, proofs: list[merkle.InclusionProof]) -> bytes:
    out = bytearray(root.to_bytes())
    out += len(proofs).to_bytes(4, "big")
    for p in proofs:
        out += p.to_bytes()
    return bytes(out)


def decode_root_proofs(raw: bytes) -> tuple[merkle.MerkleRoot, list[merkle.InclusionProof]]:
    root_len = 1 + 4 + merkle.DIGEST_BYTES
    if len(raw) < root_len + 4:
        raise ProtocolError("truncated root+proofs payload")
    root = merkle.MerkleRoot.from_bytes(raw[:root_len])
    count = int.from_bytes(raw[root_len : root_len + 4], "big")
    pos = root_len + 4
    proofs = []
    for _ in range(count):
        depth_at = pos + 9 + merkle.DIGEST_BYTES
        if depth_at >= len(raw):
            raise ProtocolError("truncated proof in payload")
        plen = 10 + merkle.DIGEST_BYTES + raw[depth_at] * (1 + merkle.DIGEST_BYTES)
        try:
            proofs.append(merkle.InclusionProof.from_bytes(raw[pos : pos + plen]))
        except ValueError as exc:
            raise ProtocolError(f"bad proof encoding: {exc}") from exc
        pos += plen
    if pos != len(raw):
        raise ProtocolError("trailing bytes in root+proofs payload")
    return root, proofs


def check_peer_commitment(committed: merkle.MerkleRoot, received_root: merkle.MerkleRoot,
                          proofs: list[merkle.InclusionProof]) -> bool:
    """The gate: the announced commitment must cover every element exactly once."""
    if received_root != committed:
        return False
    if len(proofs) != committed.set_size:
        return False
    if sorted(p.index for p in proofs) != list(range(committed.set_size)):
        return False
    return merkle.batch_verify(committed, proofs)


class Psi2Engine:
    """Message-driven state machine for one party of a two-party session."""

    def __init__(self, config: PartyConfig2, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(secrets.randbits(128))
        self.phase = "fresh"
        self.aborted = False
        self.abort_reason: Optional[str] = None
        self.intersection: Optional[set[bytes]] = None
        self.phase_ms: dict[str, float] = {}
        self._peer_verified = False
        self._vole_seed: Optional[vole.VoleSeed] = None
        self._pending_masked: Optional[bytes] = None
        self._sent_masked = False
        # receiver state
        self._table: Optional[okvs.OkvsTable] = None
        self._recv_corr: Optional[vole.ReceiverCorrelation] = None
        # sender state
        self._send_corr: Optional[vole.SenderCorrelation] = None
        self.bprime_table: Optional[okvs.OkvsTable] = None  # exposed for white-box checks

    # -- helpers -------------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.phase in ("done", "aborted")

    def _env(self, msg_type: int, payload: bytes):
        from .transport import Envelope
        return Envelope(session_id=self.config.session_id, msg_type=msg_type, payload=payload)

    def _abort(self, reason: str) -> list:
        self.aborted = True
        self.abort_reason = reason
        self.phase = "aborted"
        self.intersection = None
        return [(self.config.peer_index, self._env(MSG_ABORT, reason.encode()))]

    def _expected_length(self) -> int:
        n_x = self.config.n_own if self.config.role == RECEIVER else self.config.n_peer
        return okvs_length(n_x)

    # -- transform -----------------------------------------------------------

    def start(self) -> list:
        if self.phase != "fresh":
            raise ProtocolError("engine already started")
        t0 = time.perf_counter()
        cfg = self.config
        if not cfg.skip_self_check:
            local = merkle.root(cfg.input_set, cfg.leaf_salt)
            if local != cfg.announced_root:
                raise ConfigError("input set does not match the announced commitment")
        proofs = merkle.gen_all_paths(cfg.input_set, cfg.leaf_salt)
        out = []
        if cfg.role == RECEIVER:
            seed = self.rng.bytes(okvs.SEED_BYTES)
            params = okvs.OkvsParams.for_size(cfg.n_own, seed)
            pairs = [(x, hash_to_mask(x)) for x in cfg.input_set]
            result = okvs.encode_with_retry(pairs, params, MAX_ENCODE_ATTEMPTS, rng=self.rng)
            if result is None:
                return self._abort("oblivious table encoding failed")
            self._table, _ = result
        out.append((cfg.peer_index, self._env(
            MSG_ROOT_PROOFS, encode_root_proofs(cfg.announced_root, proofs))))
        role = vole.RECEIVER if cfg.role == RECEIVER else vole.SENDER
        from .transport import DEALER_INDEX
        out.append((DEALER_INDEX, self._env(
            vole.MSG_VOLE_REQUEST,
            vole.encode_dealer_msg(cfg.session_id, role, self._expected_length()))))
        self.phase = "transformed"
        self.phase_ms["transform"] = (time.perf_counter() - t0) * 1000
        return out

    # -- message handling ----------------------------------------------------

    def handle(self, src: int, env) -> list:
        if env.session_id != self.config.session_id:
            raise ProtocolError("envelope for a different session")
        if self.phase == "aborted":
            return []  # late traffic for a dead session is dropped
        if env.msg_type == MSG_ABORT:
            self.aborted = True
            self.abort_reason = env.payload.decode(errors="replace") or "peer abort"
            self.phase = "aborted"
            self.intersection = None
            return []
        if env.msg_type == MSG_ROOT_PROOFS:
            return self._on_root_proofs(src, env.payload)
        if env.msg_type == vole.MSG_VOLE_MATERIAL:
            return self._on_vole_material(src, env.payload)
        if env.msg_type == MSG_MASKED_VECTOR:
            return self._on_masked_vector(src, env.payload)
        if env.msg_type == MSG_DIGEST_SET:
            return self._on_digest_set(src, env.payload)
        raise ProtocolError(f"unexpected message type {env.msg_type:#x}")

    def _on_root_proofs(self, src: int, payload: bytes) -> list:
        if src != self.config.peer_index or self.phase != "transformed" or self._peer_verified:
            raise ProtocolError("root+proofs out of order")
        t0 = time.perf_counter()
        try:
            received_root, proofs = decode_root_proofs(payload)
        except ProtocolError:
            return self._abort("undecodable proof set")
        ok = check_peer_commitment(self.config.peer_root, received_root, proofs)
        self.phase_ms["verify"] = self.phase_ms.get("verify", 0.0) + (time.perf_counter() - t0) * 1000
        if not ok:
            return self._abort("peer proofs failed verification")
        self._peer_verified = True
        return self._advance()

    def _on_vole_material(self, src: int, payload: bytes) -> list:
        from .transport import DEALER_INDEX
        if src != DEALER_INDEX or self._vole_seed is not None:
            raise ProtocolError("unexpected dealer material")
        seed = vole.seed_from_material(payload)
        if seed.length != self._expected_length():
            raise ProtocolError("dealer correlation has the wrong length")
        self._vole_seed = seed
        corr = vole.extend(seed)
        if self.config.role == RECEIVER:
            self._recv_corr = corr
        else:
            self._send_corr = corr
        return self._advance()

    def _advance(self) -> list:
        cfg = self.config
        out = []
        if cfg.role == RECEIVER:
            if self._peer_verified and self._recv_corr is not None and not self._sent_masked:
                t0 = time.perf_counter()
                masked = self._recv_corr.a_vec ^ self._table.values
                payload = (self._table.params.row_seed
                           + masked.shape[0].to_bytes(4, "big")
                           + gf.vec_to_bytes(masked))
                out.append((cfg.peer_index, self._env(MSG_MASKED_VECTOR, payload)))
                self._sent_masked = True
                self.phase = "interacted"
                self.phase_ms["interact"] = (time.perf_counter() - t0) * 1000
        else:
            if (self._peer_verified and self._send_corr is not None
                    and self._pending_masked is not None and self.phase != "done"):
                out.extend(self._send_digest_set())
        return out

    def _on_masked_vector(self, src: int, payload: bytes) -> list:
        if self.config.role != SENDER or src != self.config.peer_index:
            raise ProtocolError("masked vector sent to the wrong party")
        if self._pending_masked is not None or self.phase != "transformed":
            raise ProtocolError("masked vector out of order")
        self._pending_masked = payload
        return self._advance()

    def _send_digest_set(self) -> list:
        cfg = self.config
        t0 = time.perf_counter()
        payload = self._pending_masked
        if len(payload) < okvs.SEED_BYTES + 4:
            return self._abort("malformed masked vector")
        row_seed = payload[: okvs.SEED_BYTES]
        count = int.from_bytes(payload[okvs.SEED_BYTES : okvs.SEED_BYTES + 4], "big")
        body = payload[okvs.SEED_BYTES + 4 :]
        m = self._expected_length()
        if count != m or len(body) != m * gf.GF_BYTES:
            raise ProtocolError("masked vector length mismatch")
        masked = gf.vec_from_bytes(body)
        corr = self._send_corr
        bprime = corr.b_vec ^ gf.scalar_mul_vec(corr.delta, masked)
        params = okvs.OkvsParams.for_size(cfg.n_peer, row_seed)
        self.bprime_table = okvs.OkvsTable(params=params, values=bprime)

        decoded = okvs.decode_batch(self.bprime_table, cfg.input_set)
        hb = gf.vec_from_ints([hash_to_mask(y) for y in cfg.input_set])
        unmasked = decoded ^ gf.scalar_mul_vec(corr.delta, hb)
        width = cfg.out_bytes
        digests = [output_digest(gf.vec_get(unmasked, i), width) for i in range(cfg.n_own)]
        order = self.rng.permutation(cfg.n_own)
        payload_out = len(digests).to_bytes(4, "big") + b"".join(digests[i] for i in order)
        self.phase = "done"
        self.phase_ms["interact"] = (time.perf_counter() - t0) * 1000
        return [(cfg.peer_index, self._env(MSG_DIGEST_SET, payload_out))]

    def _on_digest_set(self, src: int, payload: bytes) -> list:
        cfg = self.config
        if cfg.role != RECEIVER or src != cfg.peer_index:
            raise ProtocolError("digest set sent to the wrong party")
        if self.phase != "interacted":
            raise ProtocolError("digest set out of order")
        t0 = time.perf_counter()
        count = int.from_bytes(payload[:4], "big")
        if count != cfg.n_peer:
            raise ProtocolError("digest set size does not match the peer commitment")
        width = cfg.out_bytes
        if len(payload) != 4 + count * width:
            raise ProtocolError("bad digest set payload length")
        received = {payload[4 + i * width : 4 + (i + 1) * width] for i in range(count)}

        c_table = okvs.OkvsTable(params=self._table.params, values=self._recv_corr.c_vec)
        decoded = okvs.decode_batch(c_table, cfg.input_set)
        result = set()
        for i, x in enumerate(cfg.input_set):
            if output_digest(gf.vec_get(decoded, i), width) in received:
                result.add(x)
        self.intersection = result
        self.phase = "done"
        self.phase_ms["reconstruct"] = (time.perf_counter() - t0) * 1000
        return []
