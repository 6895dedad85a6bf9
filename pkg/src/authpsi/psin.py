"""n-party authenticated set intersection tolerating t collusions.

All n parties pre-announce tree commitments to their equally-sized sets.
Around v = n - t the parties split into group A (P_1 .. P_{v-1}), a central
coordinator P_v, and group B (P_{v+1} .. P_n); P_n is the only party that
learns the intersection.

- transform: everyone broadcasts its root and all inclusion proofs. Each
  group-A party P_i draws one PRF key per group-B party, sends each key to
  its target, and ships the coordinator an oblivious table T_i encoding
  x -> XOR of the PRF of x under all those keys. The parties P_v .. P_n
  exchange pairwise zero-sharing seeds.
- interact: every party checks every other party's proofs against the
  announced roots; the first failure anywhere broadcasts an abort and the
  whole session dies. The coordinator aggregates A^v(x) = XOR of
  Decode(T_i, x); each group-B party aggregates A^i(x) = XOR of its received
  PRF evaluations.
- reconstruct: each of P_v .. P_{n-1} programs an oblivious PRF with points
  (x, share(x) XOR A(x)) and sends the hint to P_n, which queries every hint
  at its own elements and keeps those x where its own share XOR A^n(x)
  equals the XOR of all received values. For an element held by everyone,
  each pairwise PRF term appears exactly twice and the zero-sharing shares
  cancel, so the test reduces to zero; any missing holder leaves an unpaired
  pseudorandom term.

Only P_n terminates with output; everyone else ends with none.
"""

from __future__ import annotations

import hashlib
import secrets
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import gf, merkle, okvs, opprf, zeroshare
from .errors import ConfigError, ProtocolError
from .psi2 import check_peer_commitment, decode_root_proofs, encode_root_proofs

MSG_ROOT_PROOFS = 0x11
MSG_GROUP_KEY = 0x12
MSG_SHARE_TABLE = 0x13
MSG_OPPRF_HINT = 0x14
MSG_OPRF_DEALER = opprf.MSG_OPRF_DEALER  # 0x15
MSG_ZS_SEED = 0x16
MSG_ABORT = 0x1F

MAX_ENCODE_ATTEMPTS = 16


def oprf_session_id(session_id: bytes, sender_index: int) -> bytes:
    return hashlib.sha256(session_id + b"oprf" + sender_index.to_bytes(2, "big")).digest()[:16]


def encode_indexed_key(i: int, j: int, key: bytes) -> bytes:
    return i.to_bytes(2, "big") + j.to_bytes(2, "big") + key


def decode_indexed_key(raw: bytes) -> tuple[int, int, bytes]:
    if len(raw) != 4 + 16:
        raise ProtocolError("bad keyed-pair payload length")
    return int.from_bytes(raw[:2], "big"), int.from_bytes(raw[2:4], "big"), raw[4:]


@dataclass
class PartyConfigN:
    n: int
    t: int
    party_index: int
    input_set: list[bytes]
    session_id: bytes
    roots: dict[int, merkle.MerkleRoot]
    salted: bool = True
    skip_self_check: bool = False

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError("multi-party runs need at least 3 parties")
        # the collusion cap admits the boundary grid point at odd n, e.g. (5, 3)
        if not 1 <= self.t <= (self.n + 1) // 2:
            raise ConfigError(f"collusion bound t={self.t} out of range for n={self.n}")
        if self.v < 2:
            raise ConfigError("n - t must be at least 2")
        if not 1 <= self.party_index <= self.n:
            raise ConfigError("party index out of range")
        if sorted(self.roots) != list(range(1, self.n + 1)):
            raise ConfigError("a root must be announced for every party")
        if not self.input_set:
            raise ConfigError("input set must be nonempty")
        if len(set(self.input_set)) != len(self.input_set):
            raise ConfigError("input set must contain distinct elements")
        sizes = {r.set_size for r in self.roots.values()}
        # the adversarial knob also lifts the own-size check so a tampered
        # party can run with an inflated set against its stale commitment
        if not self.skip_self_check and sizes != {len(self.input_set)}:
            raise ConfigError("all parties must commit to sets of one common size")
        if len(sizes) != 1:
            raise ConfigError("announced commitments disagree on the set size")
        if len(self.session_id) != 16:
            raise ConfigError("session id must be 16 bytes")

    @property
    def v(self) -> int:
        return self.n - self.t

    @property
    def n_l(self) -> int:
        return len(self.input_set)

    @property
    def group_a(self) -> list[int]:
        return list(range(1, self.v))

    @property
    def group_b(self) -> list[int]:
        return list(range(self.v + 1, self.n + 1))

    @property
    def subgroup(self) -> list[int]:
        """Zero-sharing participants: coordinator through P_n."""
        return list(range(self.v, self.n + 1))

    @property
    def senders(self) -> list[int]:
        """Hint senders: coordinator through P_{n-1}."""
        return list(range(self.v, self.n))

    @property
    def leaf_salt(self) -> bytes:
        return self.session_id if self.salted else b""


class PsinEngine:
    """Message-driven state machine for one party of an n-party session."""

    def __init__(self, config: PartyConfigN, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(secrets.randbits(128))
        self.phase = "fresh"
        self.aborted = False
        self.abort_reason: Optional[str] = None
        self.intersection: Optional[set[bytes]] = None  # populated only at P_n
        self.phase_ms: dict[str, float] = {}

        i = config.party_index
        self._pending_verify = {j for j in range(1, config.n + 1) if j != i}
        self._verified_all = False
        # group-A keys this party holds (group B side): sender index -> key
        self.groupa_keys: dict[int, bytes] = {}
        # PRF keys a group-A party generated, per group-B target
        self._own_groupb_keys: dict[int, bytes] = {}
        # zero-sharing pair seeds within the subgroup
        self._zs_seeds: dict[tuple[int, int], bytes] = {}
        # coordinator: tables from group A
        self._share_tables: dict[int, okvs.OkvsTable] = {}
        # sender side: OPRF key once the dealer answers
        self._oprf_key: Optional[bytes] = None
        self._hint_sent = False
        # P_n side
        self._hints: dict[int, opprf.OpprfHint] = {}
        self._evals: dict[int, list[bytes]] = {}
        self._eval_requested: set[int] = set()

    # -- helpers -------------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.phase in ("done", "aborted")

    def _env(self, msg_type: int, payload: bytes):
        from .transport import Envelope
        return Envelope(session_id=self.config.session_id, msg_type=msg_type, payload=payload)

    def _others(self) -> list[int]:
        return [j for j in range(1, self.config.n + 1) if j != self.config.party_index]

    def _abort_all(self, reason: str) -> list:
        self.aborted = True
        self.abort_reason = reason
        self.phase = "aborted"
        self.intersection = None
        env = self._env(MSG_ABORT, reason.encode())
        return [(j, env) for j in self._others()]

    def _is_sender(self) -> bool:
        cfg = self.config
        return cfg.v <= cfg.party_index < cfg.n

    # -- transform -----------------------------------------------------------

    def start(self) -> list:
        if self.phase != "fresh":
            raise ProtocolError("engine already started")
        t0 = time.perf_counter()
        cfg = self.config
        i = cfg.party_index
        if not cfg.skip_self_check:
            local = merkle.root(cfg.input_set, cfg.leaf_salt)
            if local != cfg.roots[i]:
                raise ConfigError("input set does not match the announced commitment")
        out = []
        proofs_payload = encode_root_proofs(cfg.roots[i], merkle.gen_all_paths(cfg.input_set, cfg.leaf_salt))
        for j in self._others():
            out.append((j, self._env(MSG_ROOT_PROOFS, proofs_payload)))

        if i in cfg.group_a:
            for j in cfg.group_b:
                key = self.rng.bytes(zeroshare.SEED_BYTES)
                self._own_groupb_keys[j] = key
                out.append((j, self._env(MSG_GROUP_KEY, encode_indexed_key(i, j, key))))
            pairs = []
            for x in cfg.input_set:
                acc = gf.XOR_ZERO
                for j in cfg.group_b:
                    acc = gf.xor_bytes(acc, zeroshare.prf(self._own_groupb_keys[j], x))
                pairs.append((x, gf.xor_to_field(acc)))
            params = okvs.OkvsParams.for_size(cfg.n_l, self.rng.bytes(okvs.SEED_BYTES))
            result = okvs.encode_with_retry(pairs, params, MAX_ENCODE_ATTEMPTS, rng=self.rng)
            if result is None:
                self.phase_ms["transform"] = (time.perf_counter() - t0) * 1000
                return out + self._abort_all("share table encoding failed")
            table, _ = result
            out.append((cfg.v, self._env(MSG_SHARE_TABLE, table.to_bytes())))

        if i in cfg.subgroup:
            for j in cfg.subgroup:
                if j > i:
                    seed = self.rng.bytes(zeroshare.SEED_BYTES)
                    self._zs_seeds[(i, j)] = seed
                    out.append((j, self._env(MSG_ZS_SEED, encode_indexed_key(i, j, seed))))

        if self._is_sender():
            from .transport import DEALER_INDEX
            sid = oprf_session_id(cfg.session_id, i)
            out.append((DEALER_INDEX, self._env(MSG_OPRF_DEALER, opprf.encode_key_request(sid))))

        self.phase = "transformed"
        self.phase_ms["transform"] = (time.perf_counter() - t0) * 1000
        return out

    # -- message handling ----------------------------------------------------

    def handle(self, src: int, env) -> list:
        if env.session_id != self.config.session_id:
            raise ProtocolError("envelope for a different session")
        if self.phase == "aborted":
            return []
        if env.msg_type == MSG_ABORT:
            self.aborted = True
            self.abort_reason = env.payload.decode(errors="replace") or "peer abort"
            self.phase = "aborted"
            self.intersection = None
            return []
        if self.phase == "fresh":
            raise ProtocolError("message before transform")
        if env.msg_type == MSG_ROOT_PROOFS:
            return self._on_root_proofs(src, env.payload)
        if env.msg_type == MSG_GROUP_KEY:
            return self._on_group_key(src, env.payload)
        if env.msg_type == MSG_SHARE_TABLE:
            return self._on_share_table(src, env.payload)
        if env.msg_type == MSG_ZS_SEED:
            return self._on_zs_seed(src, env.payload)
        if env.msg_type == MSG_OPPRF_HINT:
            return self._on_hint(src, env.payload)
        if env.msg_type == MSG_OPRF_DEALER:
            return self._on_oprf_dealer(src, env.payload)
        raise ProtocolError(f"unexpected message type {env.msg_type:#x}")

    def _on_root_proofs(self, src: int, payload: bytes) -> list:
        if src not in self._pending_verify:
            raise ProtocolError(f"unexpected proof set from party {src}")
        t0 = time.perf_counter()
        try:
            received_root, proofs = decode_root_proofs(payload)
        except ProtocolError:
            return self._abort_all(f"undecodable proof set from party {src}")
        ok = check_peer_commitment(self.config.roots[src], received_root, proofs)
        self.phase_ms["verify"] = self.phase_ms.get("verify", 0.0) + (time.perf_counter() - t0) * 1000
        if not ok:
            return self._abort_all(f"party {src} failed commitment verification")
        self._pending_verify.discard(src)
        if not self._pending_verify:
            self._verified_all = True
        return self._advance()

    def _on_group_key(self, src: int, payload: bytes) -> list:
        cfg = self.config
        i, j, key = decode_indexed_key(payload)
        if src != i or j != cfg.party_index or src not in cfg.group_a or cfg.party_index not in cfg.group_b:
            raise ProtocolError("group key with inconsistent endpoints")
        if i in self.groupa_keys:
            raise ProtocolError(f"duplicate group key from party {i}")
        self.groupa_keys[i] = key
        return self._advance()

    def _on_share_table(self, src: int, payload: bytes) -> list:
        cfg = self.config
        if cfg.party_index != cfg.v or src not in cfg.group_a:
            raise ProtocolError("share table sent to a non-coordinator")
        if src in self._share_tables:
            raise ProtocolError(f"duplicate share table from party {src}")
        try:
            table = okvs.OkvsTable.from_bytes(payload)
        except ValueError as exc:
            raise ProtocolError(f"bad share table: {exc}") from exc
        if table.params.n != cfg.n_l:
            raise ProtocolError("share table sized for a different set")
        self._share_tables[src] = table
        return self._advance()

    def _on_zs_seed(self, src: int, payload: bytes) -> list:
        cfg = self.config
        i, j, seed = decode_indexed_key(payload)
        if src != i or j != cfg.party_index:
            raise ProtocolError("zero-sharing seed with inconsistent endpoints")
        if i not in cfg.subgroup or j not in cfg.subgroup or not i < j:
            raise ProtocolError("zero-sharing seed outside the subgroup")
        if (i, j) in self._zs_seeds:
            raise ProtocolError(f"duplicate zero-sharing seed from party {i}")
        self._zs_seeds[(i, j)] = seed
        return self._advance()

    def _on_oprf_dealer(self, src: int, payload: bytes) -> list:
        from .transport import DEALER_INDEX
        cfg = self.config
        if src != DEALER_INDEX:
            raise ProtocolError("OPRF dealer traffic from a non-dealer")
        subtype, session, body = opprf.decode_dealer_payload(payload)
        if subtype == opprf.OPRF_KEY_RESPONSE:
            if not self._is_sender() or session != oprf_session_id(cfg.session_id, cfg.party_index):
                raise ProtocolError("OPRF key for the wrong party")
            self._oprf_key = body
            return self._advance()
        if subtype == opprf.OPRF_EVAL_RESPONSE:
            if cfg.party_index != cfg.n:
                raise ProtocolError("OPRF evaluations for a non-output party")
            for s in cfg.senders:
                if oprf_session_id(cfg.session_id, s) == session:
                    if len(body) != cfg.n_l:
                        raise ProtocolError("wrong evaluation count")
                    self._evals[s] = body
                    return self._advance()
            raise ProtocolError("evaluations for an unknown OPRF session")
        raise ProtocolError(f"unexpected OPRF dealer subtype {subtype:#x}")

    def _on_hint(self, src: int, payload: bytes) -> list:
        cfg = self.config
        if cfg.party_index != cfg.n or src not in cfg.senders:
            raise ProtocolError("hint sent to a non-output party")
        if src in self._hints:
            raise ProtocolError(f"duplicate hint from party {src}")
        try:
            hint = opprf.OpprfHint.from_bytes(payload)
        except ValueError as exc:
            raise ProtocolError(f"bad hint: {exc}") from exc
        if hint.oprf_session != oprf_session_id(cfg.session_id, src):
            raise ProtocolError("hint bound to the wrong OPRF session")
        self._hints[src] = hint
        return self._advance()

    # -- progress ------------------------------------------------------------

    def _zs_complete(self) -> bool:
        cfg = self.config
        i = cfg.party_index
        if i not in cfg.subgroup:
            return True
        need = [(min(i, j), max(i, j)) for j in cfg.subgroup if j != i]
        return all(pair in self._zs_seeds for pair in need)

    def _zs_keyset(self) -> zeroshare.ZsKeySet:
        cfg = self.config
        i = cfg.party_index
        keys = {}
        for j in cfg.subgroup:
            if j != i:
                keys[j] = self._zs_seeds[(min(i, j), max(i, j))]
        return zeroshare.ZsKeySet(party_index=i, keys=keys)

    def _aggregate(self) -> list[bytes]:
        """A^i per own element: tables at the coordinator, PRF keys in group B."""
        cfg = self.config
        i = cfg.party_index
        agg = [gf.XOR_ZERO] * cfg.n_l
        if i == cfg.v:
            for table in self._share_tables.values():
                decoded = okvs.decode_batch(table, cfg.input_set)
                for q in range(cfg.n_l):
                    agg[q] = gf.xor_bytes(agg[q], int(decoded[q, 0]).to_bytes(8, "little"))
        else:
            for s in cfg.group_a:
                key = self.groupa_keys[s]
                for q, x in enumerate(cfg.input_set):
                    agg[q] = gf.xor_bytes(agg[q], zeroshare.prf(key, x))
        return agg

    def _materials_ready(self) -> bool:
        cfg = self.config
        i = cfg.party_index
        if i == cfg.v:
            return len(self._share_tables) == len(cfg.group_a)
        if i in cfg.group_b:
            return len(self.groupa_keys) == len(cfg.group_a)
        return True

    def _advance(self) -> list:
        cfg = self.config
        i = cfg.party_index
        out = []
        if not self._verified_all:
            return out

        if i in cfg.group_a:
            self.phase = "done"
            return out

        if self._is_sender() and not self._hint_sent:
            if self._oprf_key is not None and self._zs_complete() and self._materials_ready():
                t0 = time.perf_counter()
                keyset = self._zs_keyset()
                agg = self._aggregate()
                points = [
                    (x, gf.xor_bytes(zeroshare.zs_share(keyset, x), agg[q]))
                    for q, x in enumerate(cfg.input_set)
                ]
                sid = oprf_session_id(cfg.session_id, i)
                try:
                    hint = opprf.opprf_program(points, sid, self._oprf_key, rng=self.rng,
                                               row_seed=self.rng.bytes(okvs.SEED_BYTES))
                except ProtocolError:
                    return self._abort_all("hint encoding failed")
                out.append((cfg.n, self._env(MSG_OPPRF_HINT, hint.to_bytes())))
                self._hint_sent = True
                self.phase = "done"
                self.phase_ms["reconstruct"] = (time.perf_counter() - t0) * 1000
            return out

        if i == cfg.n:
            from .transport import DEALER_INDEX
            for s in cfg.senders:
                if s not in self._eval_requested:
                    sid = oprf_session_id(cfg.session_id, s)
                    out.append((DEALER_INDEX, self._env(
                        MSG_OPRF_DEALER, opprf.encode_eval_request(sid, cfg.input_set))))
                    self._eval_requested.add(s)
            ready = (self._zs_complete() and self._materials_ready()
                     and len(self._hints) == len(cfg.senders)
                     and len(self._evals) == len(cfg.senders))
            if ready and self.phase != "done":
                t0 = time.perf_counter()
                keyset = self._zs_keyset()
                agg = self._aggregate()
                combined = [gf.XOR_ZERO] * cfg.n_l
                for s in cfg.senders:
                    sid = oprf_session_id(cfg.session_id, s)
                    z = opprf.opprf_query_batch(self._hints[s], cfg.input_set, sid, self._evals[s])
                    for q in range(cfg.n_l):
                        combined[q] = gf.xor_bytes(combined[q], z[q])
                result = set()
                for q, x in enumerate(cfg.input_set):
                    own = gf.xor_bytes(zeroshare.zs_share(keyset, x), agg[q])
                    if own == combined[q]:
                        result.add(x)
                self.intersection = result
                self.phase = "done"
                self.phase_ms["reconstruct"] = (time.perf_counter() - t0) * 1000
            return out

        return out
