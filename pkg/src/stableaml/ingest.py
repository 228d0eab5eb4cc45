"""Parsing and indexing of the input corpora.

Four CSV inputs are understood:

* ``transfers.csv`` -- ``tx_hash,log_index,token,from,to,amount,timestamp``
* ``registry.csv``  -- ``address,service``
* ``labels.csv``    -- ``address,class``
* ``metadata.csv``  -- ``address,is_contract,is_verified``

Amounts are held as integers in base units (1 token = 10**6 units) so every
downstream computation is exact.
"""

from __future__ import annotations

import calendar
import csv
import io
import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable

from .errors import (
    ConflictingLabel,
    MalformedAddress,
    ParseAborted,
    RowError,
    UnknownCategory,
    UnknownClass,
)

log = logging.getLogger(__name__)

DECIMALS = 6
UNIT = 10**DECIMALS
TOKENS = ("USDT", "USDC")
SERVICE_CATEGORIES = (
    "swap", "lending", "stake", "cex", "dex", "mixer", "defi",
    "payment", "bet", "custody", "flagged", "airdrop", "dao", "kyc",
)
CLASS_NAMES = ("normal", "cybercrime", "blocklisted")
NORMAL, CYBERCRIME, BLOCKLISTED = 0, 1, 2

TRANSFER_HEADER = ["tx_hash", "log_index", "token", "from", "to", "amount", "timestamp"]
REGISTRY_HEADER = ["address", "service"]
LABELS_HEADER = ["address", "class"]
METADATA_HEADER = ["address", "is_contract", "is_verified"]

_HEX40 = re.compile(r"[0-9a-f]{40}")
_HEX64 = re.compile(r"[0-9a-f]{64}")
_AMOUNT = re.compile(r"(\d+)(?:\.(\d*))?")


def normalize_address(raw: str) -> str:
    """Return the canonical ``0x``-prefixed lowercase form of ``raw``."""
    if not isinstance(raw, str):
        raise MalformedAddress(f"address must be text, got {type(raw).__name__}")
    s = raw.strip().lower()
    if s.startswith("0x"):
        s = s[2:]
    if not _HEX40.fullmatch(s):
        raise MalformedAddress(f"not a 20-byte hex address: {raw!r}")
    return "0x" + s


def normalize_tx_hash(raw: str) -> str:
    s = raw.strip().lower()
    if s.startswith("0x"):
        s = s[2:]
    if not _HEX64.fullmatch(s):
        raise ValueError(f"not a 32-byte hex hash: {raw!r}")
    return "0x" + s


def parse_amount(text: str) -> int:
    """Exact decimal-to-base-unit conversion; at most 6 fractional digits."""
    m = _AMOUNT.fullmatch(text.strip())
    if m is None:
        raise ValueError(f"bad amount {text!r}")
    whole, frac = m.group(1), m.group(2) or ""
    if len(frac) > DECIMALS:
        raise ValueError(f"amount {text!r} has more than {DECIMALS} fractional digits")
    return int(whole) * UNIT + int(frac.ljust(DECIMALS, "0"))


def format_amount(units: int) -> str:
    """Shortest decimal rendering of a base-unit amount (inverse of parse_amount)."""
    whole, frac = divmod(int(units), UNIT)
    if frac == 0:
        return str(whole)
    return f"{whole}.{frac:06d}".rstrip("0")


def parse_timestamp(text: str) -> int:
    s = text.strip()
    if s.isdigit():
        return int(s)
    for fmt in ("%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%SZ"):
        try:
            return calendar.timegm(datetime.strptime(s, fmt).timetuple())
        except ValueError:
            pass
    raise ValueError(f"bad timestamp {text!r}")


@dataclass(frozen=True, slots=True)
class TransferEvent:
    tx_hash: str
    log_index: int
    token: str
    sender: str
    recipient: str
    amount: int
    timestamp: int

    @property
    def key(self):
        return (self.tx_hash, self.log_index)

    def sort_key(self):
        return (self.timestamp, self.tx_hash, self.log_index)


@dataclass(frozen=True, slots=True)
class AddressMetadata:
    is_contract: bool = False
    is_verified: bool = False
    known: bool = False

    def __post_init__(self):
        if self.is_verified and not self.is_contract:
            raise ValueError("a verified address must be a contract")


UNKNOWN_METADATA = AddressMetadata()


class EventLog:
    """Immutable, canonically ordered transfer log with a per-wallet index.

    ``incoming[w]`` / ``outgoing[w]`` hold positions into ``events`` in
    canonical order. A self-transfer appears in both lists of its wallet.
    """

    __slots__ = ("events", "incoming", "outgoing", "duplicates")

    def __init__(self, events: Iterable[TransferEvent], duplicates: int = 0):
        evs = sorted(events, key=TransferEvent.sort_key)
        seen = set()
        for e in evs:
            if e.key in seen:
                raise ValueError(f"duplicate event key {e.key}")
            seen.add(e.key)
        self.events = tuple(evs)
        self.duplicates = duplicates
        incoming: dict[str, list[int]] = {}
        outgoing: dict[str, list[int]] = {}
        for i, e in enumerate(self.events):
            outgoing.setdefault(e.sender, []).append(i)
            incoming.setdefault(e.recipient, []).append(i)
        self.incoming = {a: tuple(v) for a, v in incoming.items()}
        self.outgoing = {a: tuple(v) for a, v in outgoing.items()}

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __eq__(self, other):
        return isinstance(other, EventLog) and self.events == other.events

    def __hash__(self):
        return hash(self.events)

    def wallets(self) -> list[str]:
        """All addresses touched by the log, sorted."""
        return sorted(set(self.incoming) | set(self.outgoing))

    def incoming_events(self, w):
        return [self.events[i] for i in self.incoming.get(w, ())]

    def outgoing_events(self, w):
        return [self.events[i] for i in self.outgoing.get(w, ())]

    def without_wallet(self, w) -> "EventLog":
        return EventLog(e for e in self.events if w not in (e.sender, e.recipient))


class LabelRegistry:
    """Address -> set of service categories."""

    def __init__(self, entries=None):
        self.entries: dict[str, frozenset[str]] = {}
        for addr, cats in (entries or {}).items():
            for c in cats:
                if c not in SERVICE_CATEGORIES:
                    raise ValueError(f"unknown service category {c!r}")
            if cats:
                self.entries[normalize_address(addr)] = frozenset(cats)

    def categories(self, addr) -> frozenset[str]:
        return self.entries.get(addr, frozenset())

    def has(self, addr, category) -> bool:
        return category in self.entries.get(addr, ())

    def is_service(self, addr) -> bool:
        return addr in self.entries

    def members(self, category) -> set[str]:
        return {a for a, cats in self.entries.items() if category in cats}

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, LabelRegistry) and self.entries == other.entries


class MetadataTable(dict):
    """Address -> AddressMetadata; missing addresses read as unknown EOAs."""

    def get(self, addr, default=UNKNOWN_METADATA):
        return super().get(addr, default)


@dataclass
class ValidationReport:
    events: int
    wallets: int
    tokens: dict = field(default_factory=dict)
    first_timestamp: int | None = None
    last_timestamp: int | None = None
    span_seconds: int = 0
    duplicates: int = 0
    zero_amount: int = 0

    def as_dict(self):
        return {
            "events": self.events,
            "wallets": self.wallets,
            "tokens": dict(self.tokens),
            "first_timestamp": self.first_timestamp,
            "last_timestamp": self.last_timestamp,
            "span_seconds": self.span_seconds,
            "duplicates": self.duplicates,
            "zero_amount": self.zero_amount,
        }


def _open_text(source):
    """Accept a path, raw bytes/str content, or a file-like object."""
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"))
    if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source and os.path.exists(source)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return io.StringIO(fh.read())
    if isinstance(source, str):
        return io.StringIO(source)
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return io.StringIO(data)


def _rows(source, header):
    reader = csv.reader(_open_text(source))
    try:
        first = next(reader)
    except StopIteration:
        raise RowError(1, "empty input, header missing") from None
    if [h.strip() for h in first] != header:
        raise RowError(1, f"expected header {','.join(header)}, got {','.join(first)}")
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            yield lineno, None
            continue
        yield lineno, [c.strip() for c in row]


def _parse_event(row) -> TransferEvent:
    tx, li, token, sender, recipient, amount, ts = row
    token = token.upper()
    if token not in TOKENS:
        raise ValueError(f"unsupported token {token!r}")
    log_index = int(li)
    if log_index < 0:
        raise ValueError("negative log_index")
    return TransferEvent(
        tx_hash=normalize_tx_hash(tx),
        log_index=log_index,
        token=token,
        sender=normalize_address(sender),
        recipient=normalize_address(recipient),
        amount=parse_amount(amount),
        timestamp=parse_timestamp(ts),
    )


def parse_transfers(source, error_budget: int = 0) -> EventLog:
    """Parse ``transfers.csv`` content into an EventLog.

    With ``error_budget == 0`` the first malformed row raises ``RowError``.
    A positive budget skips up to that many bad rows and raises
    ``ParseAborted`` once it is exceeded.
    """
    events: dict[tuple, TransferEvent] = {}
    errors: list[RowError] = []
    duplicates = 0
    for lineno, row in _rows(source, TRANSFER_HEADER):
        try:
            if row is None:
                raise ValueError("wrong number of columns")
            ev = _parse_event(row)
        except (ValueError, MalformedAddress) as exc:
            err = RowError(lineno, str(exc))
            if error_budget == 0:
                raise err from exc
            errors.append(err)
            if len(errors) > error_budget:
                raise ParseAborted(errors) from exc
            continue
        if ev.key in events:
            duplicates += 1
            continue
        events[ev.key] = ev
    if duplicates:
        log.warning("collapsed %d duplicate (tx_hash, log_index) rows", duplicates)
    return EventLog(events.values(), duplicates=duplicates)


def write_transfers(events: Iterable[TransferEvent], sink) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(TRANSFER_HEADER)
    for e in events:
        w.writerow([e.tx_hash, e.log_index, e.token, e.sender, e.recipient, format_amount(e.amount), e.timestamp])


def format_transfers(events: Iterable[TransferEvent]) -> str:
    buf = io.StringIO()
    write_transfers(events, buf)
    return buf.getvalue()


def parse_label_registry(source) -> LabelRegistry:
    acc: dict[str, set[str]] = {}
    for lineno, row in _rows(source, REGISTRY_HEADER):
        if row is None:
            raise RowError(lineno, "wrong number of columns")
        try:
            addr = normalize_address(row[0])
        except MalformedAddress as exc:
            raise RowError(lineno, str(exc)) from exc
        cat = row[1].lower()
        if cat not in SERVICE_CATEGORIES:
            raise UnknownCategory(lineno, f"unknown service category {row[1]!r}")
        acc.setdefault(addr, set()).add(cat)
    return LabelRegistry(acc)


def write_label_registry(registry: LabelRegistry, sink) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(REGISTRY_HEADER)
    for addr in sorted(registry.entries):
        for cat in sorted(registry.entries[addr]):
            w.writerow([addr, cat])


def parse_wallet_labels(source) -> dict[str, int]:
    labels: dict[str, int] = {}
    for lineno, row in _rows(source, LABELS_HEADER):
        if row is None:
            raise RowError(lineno, "wrong number of columns")
        try:
            addr = normalize_address(row[0])
        except MalformedAddress as exc:
            raise RowError(lineno, str(exc)) from exc
        name = row[1].lower()
        if name not in CLASS_NAMES:
            raise UnknownClass(lineno, f"unknown class {row[1]!r}")
        code = CLASS_NAMES.index(name)
        if labels.get(addr, code) != code:
            raise ConflictingLabel(lineno, f"{addr} labeled both {CLASS_NAMES[labels[addr]]} and {name}")
        labels[addr] = code
    return labels


def write_wallet_labels(labels: dict[str, int], sink) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(LABELS_HEADER)
    for addr in sorted(labels):
        w.writerow([addr, CLASS_NAMES[labels[addr]]])


def _parse_bool(text):
    t = text.lower()
    if t in ("true", "1"):
        return True
    if t in ("false", "0"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def parse_metadata(source) -> MetadataTable:
    table = MetadataTable()
    for lineno, row in _rows(source, METADATA_HEADER):
        if row is None:
            raise RowError(lineno, "wrong number of columns")
        try:
            addr = normalize_address(row[0])
            table[addr] = AddressMetadata(_parse_bool(row[1]), _parse_bool(row[2]), known=True)
        except (ValueError, MalformedAddress) as exc:
            raise RowError(lineno, str(exc)) from exc
    return table


def write_metadata(table: dict, sink) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(METADATA_HEADER)
    for addr in sorted(table):
        m = table[addr]
        w.writerow([addr, str(m.is_contract).lower(), str(m.is_verified).lower()])


def validate_log(log: EventLog) -> ValidationReport:
    evs = log.events
    if not evs:
        return ValidationReport(events=0, wallets=0, duplicates=log.duplicates)
    first = evs[0].timestamp
    last = evs[-1].timestamp
    return ValidationReport(
        events=len(evs),
        wallets=len(log.wallets()),
        tokens=dict(sorted(Counter(e.token for e in evs).items())),
        first_timestamp=first,
        last_timestamp=last,
        span_seconds=last - first,
        duplicates=log.duplicates,
        zero_amount=sum(1 for e in evs if e.amount == 0),
    )
