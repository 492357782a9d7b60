"""Embedded permissioned ledger.

One ordering service serializes transactions into blocks (at most
``batch_size`` transactions, or ``batch_timeout_ms`` of simulated time since
the first pending transaction). Each transaction must be endorsed by a
quorum of peers that independently re-run every registered validator.
Committed blocks are hash-chained and optionally mirrored to an append-only
line-delimited log, one canonical block per line.
"""

from __future__ import annotations

import enum
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

from . import canonical
from .canonical import CanonicalError, ZERO_DIGEST
from .clock import SimClock

DEFAULT_PEERS = ("peer0", "peer1", "peer2")
TX_ID_WIDTH = 20


class TxKind(str, enum.Enum):
    OBSERVATION_ANCHOR = "ObservationAnchor"
    ACTION_PROPOSAL = "ActionProposal"
    ACTION_VERDICT = "ActionVerdict"
    EFFECT_RECORD = "EffectRecord"


MANDATORY_KEYS: dict[TxKind, frozenset[str]] = {
    TxKind.OBSERVATION_ANCHOR: frozenset({"obs_id", "obs_hash", "metadata"}),
    TxKind.ACTION_PROPOSAL: frozenset(
        {"action_id", "action_type", "params", "obs_hashes", "agent_id", "policy_context"}
    ),
    TxKind.ACTION_VERDICT: frozenset({"action_id", "verdict", "reason"}),
    TxKind.EFFECT_RECORD: frozenset({"action_id", "effect_hash", "status_code", "summary"}),
}

EVENT_NAMES = frozenset({"ActionApproved", "ActionRejected", "SafetyViolation"})

_TX_KEYS = frozenset({"tx_id", "kind", "agent_id", "payload", "payload_hash", "timestamp"})
_BLOCK_KEYS = frozenset({"height", "prev_hash", "txs", "endorsements", "block_hash"})


class LedgerError(Exception):
    pass


class StructuralError(LedgerError):
    pass


class EndorsementFailure(LedgerError):
    pass


class UnknownEventName(LedgerError):
    pass


class LedgerUnavailable(LedgerError):
    pass


@dataclass(frozen=True)
class Transaction:
    tx_id: str
    kind: TxKind
    agent_id: str
    payload: dict[str, Any]
    payload_hash: str
    timestamp: int

    @classmethod
    def build(
        cls, tx_id: str, kind: TxKind | str, agent_id: str, payload: Mapping[str, Any], timestamp: int
    ) -> "Transaction":
        body = canonical.loads(canonical.dumps(payload))
        return cls(tx_id, TxKind(kind), agent_id, body, canonical.digest(body), int(timestamp))

    def to_dict(self) -> dict[str, Any]:
        return {
            "tx_id": self.tx_id,
            "kind": self.kind.value,
            "agent_id": self.agent_id,
            "payload": self.payload,
            "payload_hash": self.payload_hash,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Transaction":
        if set(data) != _TX_KEYS:
            raise StructuralError(f"transaction keys {sorted(data)}")
        try:
            kind = TxKind(data["kind"])
        except ValueError as exc:
            raise StructuralError(f"unknown kind {data['kind']!r}") from exc
        if not isinstance(data["payload"], dict):
            raise StructuralError("payload must be a mapping")
        ts = data["timestamp"]
        if not isinstance(ts, int) or isinstance(ts, bool):
            raise StructuralError("timestamp must be an integer")
        for key in ("tx_id", "agent_id", "payload_hash"):
            if not isinstance(data[key], str):
                raise StructuralError(f"{key} must be a string")
        return cls(data["tx_id"], kind, data["agent_id"], data["payload"], data["payload_hash"], ts)


def compute_block_hash(prev_hash: str, txs: Sequence[Transaction], height: int) -> str:
    body = canonical.dumps([tx.to_dict() for tx in txs])
    return canonical.sha256_hex(prev_hash + body + str(height))


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    txs: tuple[Transaction, ...]
    endorsements: tuple[str, ...]
    block_hash: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "txs": [tx.to_dict() for tx in self.txs],
            "endorsements": list(self.endorsements),
            "block_hash": self.block_hash,
        }

    def to_line(self) -> str:
        return canonical.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Block":
        if not isinstance(data, dict) or set(data) != _BLOCK_KEYS:
            raise StructuralError("block keys")
        if not isinstance(data["txs"], list) or not isinstance(data["endorsements"], list):
            raise StructuralError("block txs/endorsements must be lists")
        height = data["height"]
        if not isinstance(height, int) or isinstance(height, bool):
            raise StructuralError("height must be an integer")
        txs = tuple(Transaction.from_dict(t) for t in data["txs"])
        return cls(height, data["prev_hash"], txs, tuple(data["endorsements"]), data["block_hash"])


def genesis_block(peers: Sequence[str] = DEFAULT_PEERS) -> Block:
    return Block(0, ZERO_DIGEST, (), tuple(sorted(peers)), compute_block_hash(ZERO_DIGEST, (), 0))


@dataclass(frozen=True)
class LedgerEvent:
    name: str
    subject: str
    detail: str
    timestamp: int


@dataclass(frozen=True)
class Receipt:
    tx_id: str
    block_height: int


@dataclass(frozen=True)
class VerificationReport:
    ok: bool
    first_bad_height: int | None = None
    reason: str = ""


def validate_structure(tx: Transaction) -> None:
    """Checks every peer and every verifier applies regardless of contract state."""
    missing = MANDATORY_KEYS[tx.kind] - set(tx.payload)
    if missing:
        raise StructuralError(f"{tx.kind.value} missing keys {sorted(missing)}")
    if canonical.digest(tx.payload) != tx.payload_hash:
        raise StructuralError(f"payload_hash mismatch for tx {tx.tx_id}")
    if len(tx.tx_id) != TX_ID_WIDTH or not tx.tx_id.isdigit():
        raise StructuralError(f"malformed tx_id {tx.tx_id!r}")


Validator = Callable[[Transaction], None]


@dataclass
class Peer:
    """An endorsing peer. ``dissent`` is a fault-injection hook."""

    peer_id: str
    dissent: Callable[[Transaction], bool] | None = None
    online: bool = True

    def endorse(self, tx: Transaction, validators: Iterable[Validator]) -> bool:
        if not self.online:
            return False
        if self.dissent is not None and self.dissent(tx):
            return False
        try:
            for validate in validators:
                validate(tx)
        except Exception:
            return False
        return True


class Subscription:
    """Ordered, lossless per-subscriber event queue."""

    def __init__(self, names: frozenset[str]) -> None:
        self.names = names
        self._queue: deque[LedgerEvent] = deque()
        self._lock = threading.Lock()

    def _push(self, event: LedgerEvent) -> None:
        if event.name in self.names:
            with self._lock:
                self._queue.append(event)

    def drain(self) -> list[LedgerEvent]:
        with self._lock:
            items = list(self._queue)
            self._queue.clear()
        return items

    def __iter__(self) -> Iterator[LedgerEvent]:
        while True:
            with self._lock:
                if not self._queue:
                    return
                event = self._queue.popleft()
            yield event

    def __len__(self) -> int:
        return len(self._queue)


@dataclass
class _Pending:
    txs: list[Transaction] = field(default_factory=list)
    endorsers: set[str] = field(default_factory=set)
    events: list[LedgerEvent] = field(default_factory=list)


class Ledger:
    def __init__(
        self,
        clock: SimClock | None = None,
        *,
        log_path: str | Path | None = None,
        batch_size: int = 10,
        batch_timeout_ms: int = 200,
        peers: Sequence[str] = DEFAULT_PEERS,
        quorum: int = 2,
    ) -> None:
        self.clock = clock or SimClock()
        self.batch_size = batch_size
        self.batch_timeout_ms = batch_timeout_ms
        self.peers = [Peer(p) for p in peers]
        self.quorum = quorum
        self.available = True
        self._validators: list[Validator] = [validate_structure]
        self._blocks: list[Block] = [genesis_block(peers)]
        self._pending = _Pending()
        self._tx_ids: set[str] = set()
        self._last_id = ""
        self._next_id = 1
        self._subs: list[Subscription] = []
        self._lock = threading.RLock()
        self.log_path = Path(log_path) if log_path is not None else None
        if self.log_path is not None:
            self.log_path.write_text(self._blocks[0].to_line() + "\n", encoding="utf-8")

    # -- writing -----------------------------------------------------------

    def register_validator(self, validator: Validator) -> None:
        self._validators.append(validator)

    def new_transaction(
        self, kind: TxKind | str, agent_id: str, payload: Mapping[str, Any], *, timestamp: int | None = None
    ) -> Transaction:
        with self._lock:
            tx_id = str(self._next_id).zfill(TX_ID_WIDTH)
            self._next_id += 1
            ts = self.clock.now_ms if timestamp is None else timestamp
            return Transaction.build(tx_id, kind, agent_id, payload, ts)

    def append_transaction(self, tx: Transaction, events: Sequence[LedgerEvent] = ()) -> Receipt:
        with self._lock:
            if not self.available:
                raise LedgerUnavailable("ledger is not accepting transactions")
            validate_structure(tx)
            if tx.tx_id in self._tx_ids:
                raise StructuralError(f"duplicate tx_id {tx.tx_id}")
            if tx.tx_id <= self._last_id:
                raise StructuralError(f"tx_id {tx.tx_id} arrived after a later id; use submit() when producers race")
            endorsers = {p.peer_id for p in self.peers if p.endorse(tx, self._validators)}
            if len(endorsers) < self.quorum:
                raise EndorsementFailure(
                    f"tx {tx.tx_id} endorsed by {len(endorsers)} of {len(self.peers)} peers"
                )
            pending = self._pending
            if pending.txs:
                expired = tx.timestamp - pending.txs[0].timestamp >= self.batch_timeout_ms
                if expired or len(pending.endorsers & endorsers) < self.quorum:
                    self._cut()
                    pending = self._pending
            pending.endorsers = set(endorsers) if not pending.txs else pending.endorsers & endorsers
            pending.txs.append(tx)
            pending.events.extend(events)
            self._tx_ids.add(tx.tx_id)
            self._last_id = tx.tx_id
            height = len(self._blocks)
            if len(pending.txs) >= self.batch_size:
                self._cut()
            return Receipt(tx.tx_id, height)

    def submit(
        self, kind: TxKind | str, agent_id: str, payload: Mapping[str, Any], events: Sequence[LedgerEvent] = ()
    ) -> Receipt:
        """Allocate an id and append in one step; safe for racing producers."""
        with self._lock:
            return self.append_transaction(self.new_transaction(kind, agent_id, payload), events)

    def poll(self) -> Block | None:
        """Cut the pending block if its batch timeout has elapsed on the clock."""
        with self._lock:
            pending = self._pending
            if pending.txs and self.clock.now_ms - pending.txs[0].timestamp >= self.batch_timeout_ms:
                return self._cut()
            return None

    def flush(self) -> Block | None:
        with self._lock:
            return self._cut() if self._pending.txs else None

    def _cut(self) -> Block:
        pending = self._pending
        prev = self._blocks[-1]
        height = prev.height + 1
        txs = tuple(pending.txs)
        block = Block(
            height,
            prev.block_hash,
            txs,
            tuple(sorted(pending.endorsers)),
            compute_block_hash(prev.block_hash, txs, height),
        )
        self._blocks.append(block)
        self._pending = _Pending()
        if self.log_path is not None:
            with self.log_path.open("a", encoding="utf-8") as fh:
                fh.write(block.to_line() + "\n")
        for event in pending.events:
            for sub in self._subs:
                sub._push(event)
        return block

    # -- reading -----------------------------------------------------------

    @property
    def blocks(self) -> list[Block]:
        with self._lock:
            return list(self._blocks)

    @property
    def height(self) -> int:
        return len(self._blocks) - 1

    def pending_count(self) -> int:
        return len(self._pending.txs)

    def transactions(self) -> list[Transaction]:
        return [tx for block in self.blocks for tx in block.txs]

    def subscribe(self, names: Iterable[str]) -> Subscription:
        wanted = frozenset(names)
        if not wanted:
            raise ValueError("subscription filter must be non-empty")
        unknown = wanted - EVENT_NAMES
        if unknown:
            raise UnknownEventName(", ".join(sorted(unknown)))
        sub = Subscription(wanted)
        with self._lock:
            self._subs.append(sub)
        return sub

    def query(
        self,
        *,
        by_tx_id: str | None = None,
        by_action_id: str | None = None,
        by_agent_id: str | None = None,
    ) -> list[Transaction]:
        selectors = [s for s in (by_tx_id, by_action_id, by_agent_id) if s is not None]
        if len(selectors) != 1:
            raise ValueError("exactly one selector is required")
        txs = self.transactions()
        if by_tx_id is not None:
            return [tx for tx in txs if tx.tx_id == by_tx_id]
        if by_agent_id is not None:
            return [tx for tx in txs if tx.agent_id == by_agent_id]
        return lineage(txs, by_action_id)

    def verify_chain(self) -> VerificationReport:
        return verify_lines([b.to_line() for b in self.blocks], [p.peer_id for p in self.peers], self.quorum)

    def log_text(self) -> str:
        return "".join(b.to_line() + "\n" for b in self.blocks)

    def write_log(self, path: str | Path) -> None:
        Path(path).write_text(self.log_text(), encoding="utf-8")

    @classmethod
    def from_log(cls, path: str | Path) -> "Ledger":
        """Rebuild a read-only view of a persisted ledger (verify it separately)."""
        ledger = cls()
        blocks = []
        for line in read_log_lines(path):
            blocks.append(Block.from_dict(canonical.loads(line)))
        if not blocks:
            raise LedgerError("empty ledger log")
        ledger._blocks = blocks
        ledger._tx_ids = {tx.tx_id for b in blocks for tx in b.txs}
        ledger._last_id = max(ledger._tx_ids, default="")
        ledger.available = False
        return ledger


def lineage(txs: Sequence[Transaction], action_id: str) -> list[Transaction]:
    """Anchors referenced by the action's proposal plus every tx carrying its action_id."""
    own = [tx for tx in txs if tx.kind is not TxKind.OBSERVATION_ANCHOR and tx.payload.get("action_id") == action_id]
    hashes: set[str] = set()
    for tx in own:
        if tx.kind is TxKind.ACTION_PROPOSAL and isinstance(tx.payload.get("obs_hashes"), list):
            hashes.update(h for h in tx.payload["obs_hashes"] if isinstance(h, str))
    own_ids = {tx.tx_id for tx in own}
    return [
        tx
        for tx in txs
        if tx.tx_id in own_ids
        or (tx.kind is TxKind.OBSERVATION_ANCHOR and tx.payload.get("obs_hash") in hashes)
    ]


def read_log_lines(path: str | Path) -> list[str]:
    data = Path(path).read_bytes()
    if not data:
        raise LedgerError(f"empty ledger log {path}")
    pieces = data.split(b"\n")
    if pieces[-1] == b"":
        pieces.pop()
    return [line.decode("utf-8", errors="replace") for line in pieces]


def _check_block_line(
    line: str, height: int, prev_hash: str, peers: frozenset[str], quorum: int, seen: set[str], last_id: list[str]
) -> tuple[str | None, str]:
    """Returns (block_hash, "") when the line is a valid block, else (None, reason)."""
    try:
        data = canonical.loads(line)
    except CanonicalError as exc:
        return None, f"unparseable: {exc}"
    if canonical.dumps(data) != line:
        return None, "not in canonical form"
    try:
        block = Block.from_dict(data)
    except LedgerError as exc:
        return None, str(exc)
    if block.height != height:
        return None, f"height {block.height} != {height}"
    if block.prev_hash != prev_hash:
        return None, "prev_hash does not match predecessor"
    ends = block.endorsements
    if not all(isinstance(e, str) for e in ends):
        return None, "invalid endorsement set"
    if list(ends) != sorted(set(ends)) or not set(ends) <= peers or len(ends) < quorum:
        return None, "invalid endorsement set"
    if height == 0 and block.txs:
        return None, "genesis block carries transactions"
    if height > 0 and not block.txs:
        return None, "empty non-genesis block"
    for tx in block.txs:
        try:
            validate_structure(tx)
        except StructuralError as exc:
            return None, str(exc)
        if tx.tx_id in seen or (last_id and tx.tx_id <= last_id[0]):
            return None, f"tx_id {tx.tx_id} out of order or duplicated"
        seen.add(tx.tx_id)
        last_id[:] = [tx.tx_id]
    if compute_block_hash(block.prev_hash, block.txs, block.height) != block.block_hash:
        return None, "block_hash does not recompute"
    return block.block_hash, ""


def verify_lines(
    lines: Sequence[str], peers: Sequence[str] = DEFAULT_PEERS, quorum: int = 2
) -> VerificationReport:
    if not lines:
        return VerificationReport(False, 0, "no blocks")
    peer_set = frozenset(peers)
    prev = ZERO_DIGEST
    seen: set[str] = set()
    last_id: list[str] = []
    for height, line in enumerate(lines):
        block_hash, reason = _check_block_line(line, height, prev, peer_set, quorum, seen, last_id)
        if block_hash is None:
            return VerificationReport(False, height, reason)
        prev = block_hash
    return VerificationReport(True)


def verify_log(path: str | Path) -> VerificationReport:
    """Verify a persisted ledger log; raises LedgerError for an empty/unreadable file."""
    return verify_lines(read_log_lines(path))
