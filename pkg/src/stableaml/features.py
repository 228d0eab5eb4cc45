"""The 68-feature wallet behavioral profile.

Extraction runs in two passes. Pass one computes everything that depends
only on a wallet's own transfers plus registry and metadata lookups. Pass two
reads the pass-one profiles of neighboring wallets to produce the
second-degree, proxy-exposure and third-degree features.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import FormatError
from .graphstore import HopQueryConfig, TransactionGraph, build_graph, counterparties, k_hop_set
from .ingest import UNIT, EventLog, LabelRegistry, MetadataTable, normalize_address

CATALOG_VERSION = "1.0"
DAY = 86_400


class FeatureSpec(NamedTuple):
    name: str
    category: str
    kind: str


# interaction-feature suffix -> registry category ("SC" reads bytecode metadata)
_CATEGORY_OF = {
    "Payment": "payment", "Bet": "bet", "Cex": "cex", "Custody": "custody",
    "Defi": "defi", "Dex": "dex", "Flagged": "flagged", "Lending": "lending",
    "Mixer": "mixer", "SC": "SC", "Stake": "stake", "Swap": "swap",
}
_RECEIVED = ["Payment", "Bet", "Cex", "Custody", "Defi", "Dex", "Flagged", "Lending", "Mixer", "SC", "Stake", "Swap"]
_SENT = ["Bet", "Cex", "Custody", "Defi", "Dex", "Flagged", "Lending", "Mixer", "Payment", "SC", "Stake", "Swap"]
_SECOND = [
    "MixBehaviour", "MultipleSameValue", "Bet", "Cex", "Cluster", "Custody", "Defi", "Dex",
    "Flagged", "Lending", "Mixer", "Over1k", "Over5k", "Over10k", "Payment", "Proxy", "SC",
    "SingleFrom", "SingleTo", "Staking", "Swap",
]
_BOOLEAN = {
    "hasKYC", "isPartOfClusterFrom", "isPartOfClusterTo",
    "isLongTermWallet", "isVerifiedContract", "isWallet",
}
_SCORE = {"hasMixerBehaviour"}


def _build_catalog():
    rows = [("hasKYC", "Interaction")]
    rows += [(f"receivedFrom{s}", "Interaction") for s in _RECEIVED]
    rows += [(f"sentTo{s}", "Interaction") for s in _SENT]
    rows += [("usedWithAirdrop", "Interaction"), ("usedWithDao", "Interaction")]
    rows += [(f"2ndWith{s}", "Derived") for s in _SECOND]
    rows += [(n, "Derived") for n in (
        "3rdWithFlagged", "circleDetected", "clusterScore", "hasMixerBehaviour",
        "hasProxyBehaviour", "isPartOfClusterFrom", "isPartOfClusterTo",
        "receivedFromProxy", "sentToProxy")]
    rows += [(n, "Transfer") for n in (
        "receiveMulSameValue", "receiveSingleFrom", "sentMultipleSameValue",
        "sentToSingleAddress", "transferOver1k", "transferOver5k", "transferOver10k")]
    rows += [(n, "TemporalDirect") for n in (
        "highFrequency", "isLongTermWallet", "isVerifiedContract", "isWallet")]
    out = []
    for name, cat in rows:
        kind = "boolean" if name in _BOOLEAN else "score" if name in _SCORE else "count"
        out.append(FeatureSpec(name, cat, kind))
    return tuple(out)


CATALOG = _build_catalog()
FEATURE_NAMES = tuple(f.name for f in CATALOG)
N_FEATURES = len(CATALOG)
INDEX = {n: i for i, n in enumerate(FEATURE_NAMES)}


def feature_catalog():
    return CATALOG


def catalog_manifest() -> dict:
    return {
        "version": CATALOG_VERSION,
        "features": [{"name": f.name, "kind": f.kind, "category": f.category} for f in CATALOG],
    }


@dataclass(frozen=True)
class FeatureConfig:
    same_value_min_group: int = 3
    proxy_window_seconds: int = DAY
    circle_window_seconds: int = DAY
    high_freq_daily_threshold: int = 10
    long_term_days: int = 90
    mixer_balance_epsilon: float = 0.05
    mixer_min_transfers_each_way: int = 10
    value_thresholds: tuple = (1_000, 5_000, 10_000)
    proxy_amount_tolerance: float = 0.0
    hop: HopQueryConfig = field(default_factory=HopQueryConfig)
    flagged_from_labels: bool = False

    def __post_init__(self):
        positive = (
            self.same_value_min_group, self.proxy_window_seconds, self.circle_window_seconds,
            self.high_freq_daily_threshold, self.long_term_days, self.mixer_min_transfers_each_way,
        )
        if any(v <= 0 for v in positive) or any(t <= 0 for t in self.value_thresholds):
            raise ValueError("feature windows and thresholds must be positive")
        if len(self.value_thresholds) != 3:
            raise ValueError("exactly three value thresholds are required")
        if not 0 <= self.mixer_balance_epsilon <= 1 or self.proxy_amount_tolerance < 0:
            raise ValueError("epsilon must lie in [0, 1] and tolerance must be >= 0")


class FeatureMatrix:
    """Rows of 68-dim profiles keyed by address (sorted)."""

    def __init__(self, addresses, values):
        self.addresses = list(addresses)
        self.values = np.asarray(values, dtype=float).reshape(len(self.addresses), N_FEATURES)
        self._row = {a: i for i, a in enumerate(self.addresses)}

    def __len__(self):
        return len(self.addresses)

    def __contains__(self, addr):
        return addr in self._row

    def __getitem__(self, addr) -> dict:
        return dict(zip(FEATURE_NAMES, self.values[self._row[addr]].tolist()))

    def vector(self, addr) -> np.ndarray:
        return self.values[self._row[addr]]

    def get(self, addr, name):
        return self.values[self._row[addr], INDEX[name]]

    def rows(self, addrs) -> np.ndarray:
        return self.values[[self._row[a] for a in addrs]]

    def __eq__(self, other):
        return (isinstance(other, FeatureMatrix) and self.addresses == other.addresses
                and np.array_equal(self.values, other.values))


def _fmt(value, kind):
    if kind == "score":
        return f"{value:.6f}"
    return str(int(value))


def write_features(fm: FeatureMatrix, sink) -> None:
    kinds = [f.kind for f in CATALOG]
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["address", *FEATURE_NAMES])
    for addr, row in zip(fm.addresses, fm.values):
        w.writerow([addr, *(_fmt(v, k) for v, k in zip(row.tolist(), kinds))])


def features_to_csv(fm: FeatureMatrix) -> str:
    buf = io.StringIO()
    write_features(fm, buf)
    return buf.getvalue()


def read_features(source) -> FeatureMatrix:
    text = source.read() if hasattr(source, "read") else open(source, encoding="utf-8").read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != ["address", *FEATURE_NAMES]:
        raise FormatError("features file header does not match the catalog")
    addrs, vals = [], []
    for row in reader:
        if not row:
            continue
        addrs.append(normalize_address(row[0]))
        vals.append([float(v) for v in row[1:]])
    return FeatureMatrix(addrs, np.array(vals, dtype=float).reshape(len(addrs), N_FEATURES))


def write_catalog(sink) -> None:
    json.dump(catalog_manifest(), sink, indent=2)
    sink.write("\n")


# ---------------------------------------------------------------------------
# pass one


class _Context:
    def __init__(self, log, registry, metadata, cfg, labels=None):
        self.log = log
        self.registry = registry or LabelRegistry()
        self.metadata = metadata if metadata is not None else MetadataTable()
        self.cfg = cfg
        flagged = self.registry.members("flagged")
        if cfg.flagged_from_labels and labels:
            flagged |= {a for a, c in labels.items() if c != 0}
        self.flagged = frozenset(flagged)
        self.thresholds = tuple(t * UNIT for t in cfg.value_thresholds)

    def carries(self, addr, cat):
        if cat == "flagged":
            return addr in self.flagged
        if cat == "SC":
            return self.metadata.get(addr).is_contract
        return self.registry.has(addr, cat)


def _same_value_count(amounts, min_group):
    counts = Counter(amounts)
    return sum(c for c in counts.values() if c >= min_group)


def _circle_count(w, ins, outs, window):
    by_in = defaultdict(list)
    for e in ins:
        if e.sender != w:
            by_in[e.sender].append(e.timestamp)
    total = 0
    for e in outs:
        times = by_in.get(e.recipient)
        if not times or e.recipient == w:
            continue
        lo = bisect.bisect_left(times, e.timestamp - window)
        hi = bisect.bisect_right(times, e.timestamp + window)
        total += hi - lo
    return total


def _amount_match(a_in, a_out, tol):
    if tol == 0:
        return a_in == a_out
    return abs(a_out - a_in) <= tol * a_in


def _proxy_count(w, ins, outs, window, tol):
    """Greedy earliest-first one-to-one matching of inflows to equal outflows."""
    outs = [e for e in outs if e.recipient != w]
    used = [False] * len(outs)
    if tol == 0:
        by_amount = defaultdict(list)
        for j, e in enumerate(outs):
            by_amount[e.amount].append(j)
    matched = 0
    for e in ins:
        if e.sender == w:
            continue
        pool = by_amount.get(e.amount, ()) if tol == 0 else range(len(outs))
        for j in pool:
            o = outs[j]
            if used[j] or o.timestamp < e.timestamp or not _amount_match(e.amount, o.amount, tol):
                continue
            if o.timestamp > e.timestamp + window:
                break
            used[j] = True
            matched += 1
            break
    return matched


def base_profile(w, ctx: _Context) -> dict:
    """Pass-one values (plus a few private ``_``-prefixed helpers) for ``w``."""
    cfg = ctx.cfg
    log = ctx.log
    ins = log.incoming_events(w)
    outs = log.outgoing_events(w)
    f: dict = {}

    senders = [e.sender for e in ins]
    recipients = [e.recipient for e in outs]
    for s in _RECEIVED:
        cat = _CATEGORY_OF[s]
        f[f"receivedFrom{s}"] = sum(1 for a in senders if ctx.carries(a, cat))
    for s in _SENT:
        cat = _CATEGORY_OF[s]
        f[f"sentTo{s}"] = sum(1 for a in recipients if ctx.carries(a, cat))
    others = senders + recipients
    f["usedWithAirdrop"] = sum(1 for a in others if ctx.registry.has(a, "airdrop"))
    f["usedWithDao"] = sum(1 for a in others if ctx.registry.has(a, "dao"))
    f["hasKYC"] = int(any(ctx.registry.has(a, "kyc") for a in others))

    t1, t5, t10 = ctx.thresholds
    amounts = [e.amount for e in ins] + [e.amount for e in outs]
    f["transferOver1k"] = sum(1 for a in amounts if a > t1)
    f["transferOver5k"] = sum(1 for a in amounts if a > t5)
    f["transferOver10k"] = sum(1 for a in amounts if a > t10)
    g = cfg.same_value_min_group
    f["receiveMulSameValue"] = _same_value_count([e.amount for e in ins], g)
    f["sentMultipleSameValue"] = _same_value_count([e.amount for e in outs], g)
    f["receiveSingleFrom"] = max(Counter(senders).values(), default=0)
    f["sentToSingleAddress"] = max(Counter(recipients).values(), default=0)

    touching = sorted({e.key: e for e in ins + outs}.values(), key=lambda e: e.sort_key())
    per_day = Counter(e.timestamp // DAY for e in touching)
    f["highFrequency"] = sum(1 for c in per_day.values() if c > cfg.high_freq_daily_threshold)
    if touching:
        span = touching[-1].timestamp - touching[0].timestamp
        f["isLongTermWallet"] = int(span > cfg.long_term_days * DAY)
    else:
        f["isLongTermWallet"] = 0
    meta = ctx.metadata.get(w)
    f["isWallet"] = int(not meta.is_contract)
    f["isVerifiedContract"] = int(meta.is_verified)

    f["circleDetected"] = _circle_count(w, ins, outs, cfg.circle_window_seconds)
    f["hasProxyBehaviour"] = _proxy_count(w, ins, outs, cfg.proxy_window_seconds, cfg.proxy_amount_tolerance)
    sum_in = sum(e.amount for e in ins)
    sum_out = sum(e.amount for e in outs)
    f["hasMixerBehaviour"] = abs(sum_out - sum_in) / (sum_out + sum_in) if sum_in > 0 and sum_out > 0 else 1.0
    f["clusterScore"] = len({a for a in others if a != w and a in ctx.flagged})
    f["isPartOfClusterFrom"] = int(any(c >= g for c in Counter((e.amount, e.recipient) for e in outs).values()))
    f["isPartOfClusterTo"] = int(any(c >= g for c in Counter((e.amount, e.sender) for e in ins).values()))

    f["_senders"] = len(set(senders))
    f["_recipients"] = len(set(recipients))
    f["_n_in"] = len(ins)
    f["_n_out"] = len(outs)
    return f


# ---------------------------------------------------------------------------
# pass two


def _predicates(cfg: FeatureConfig):
    """2ndWith* suffix -> predicate over a counterparty's pass-one profile."""

    def touched(cat):
        return lambda p: p[f"receivedFrom{cat}"] + p[f"sentTo{cat}"] >= 1

    preds = {s: touched(s) for s in ("Bet", "Cex", "Custody", "Defi", "Dex", "Flagged",
                                     "Lending", "Mixer", "Payment", "SC", "Swap")}
    preds["Staking"] = touched("Stake")
    preds["Over1k"] = lambda p: p["transferOver1k"] >= 1
    preds["Over5k"] = lambda p: p["transferOver5k"] >= 1
    preds["Over10k"] = lambda p: p["transferOver10k"] >= 1
    preds["SingleFrom"] = lambda p: p["_senders"] == 1
    preds["SingleTo"] = lambda p: p["_recipients"] == 1
    preds["MultipleSameValue"] = lambda p: p["receiveMulSameValue"] + p["sentMultipleSameValue"] >= 1
    preds["Cluster"] = lambda p: p["isPartOfClusterFrom"] == 1 or p["isPartOfClusterTo"] == 1
    preds["Proxy"] = lambda p: p["hasProxyBehaviour"] >= 1
    eps, n_min = cfg.mixer_balance_epsilon, cfg.mixer_min_transfers_each_way
    preds["MixBehaviour"] = lambda p: (
        p["hasMixerBehaviour"] <= eps and p["_n_in"] >= n_min and p["_n_out"] >= n_min
    )
    return preds


def derived_network_features(w, ctx: _Context, g: TransactionGraph, base: dict, preds=None) -> dict:
    cfg = ctx.cfg
    preds = preds or _predicates(cfg)
    cps = counterparties(g, w, cfg.hop, ctx.registry)
    profiles = [base[u] for u in cps]
    f = {f"2ndWith{s}": sum(1 for p in profiles if preds[s](p)) for s in _SECOND}
    third = k_hop_set(g, w, 3, cfg.hop, ctx.registry)
    f["3rdWithFlagged"] = sum(1 for u in third if u in ctx.flagged)
    f["receivedFromProxy"] = sum(
        1 for e in ctx.log.incoming_events(w) if base[e.sender]["hasProxyBehaviour"] >= 1)
    f["sentToProxy"] = sum(
        1 for e in ctx.log.outgoing_events(w) if base[e.recipient]["hasProxyBehaviour"] >= 1)
    return f


def interaction_features(w, log, registry, metadata, cfg=FeatureConfig()) -> dict:
    ctx = _Context(log, registry, metadata, cfg)
    p = base_profile(w, ctx)
    return {f.name: p[f.name] for f in CATALOG if f.category == "Interaction"}


def transfer_features(w, log, cfg=FeatureConfig()) -> dict:
    ctx = _Context(log, None, None, cfg)
    p = base_profile(w, ctx)
    return {f.name: p[f.name] for f in CATALOG if f.category == "Transfer"}


def temporal_direct_features(w, log, metadata, cfg=FeatureConfig()) -> dict:
    ctx = _Context(log, None, metadata, cfg)
    p = base_profile(w, ctx)
    return {f.name: p[f.name] for f in CATALOG if f.category == "TemporalDirect"}


def extract_all(log: EventLog, g: TransactionGraph | None = None, registry=None, metadata=None,
                cfg: FeatureConfig = FeatureConfig(), labels=None) -> FeatureMatrix:
    """One profile per wallet in ``log``, rows sorted by address.

    ``labels`` is only consulted when ``cfg.flagged_from_labels`` is set.
    """
    if g is None:
        g = build_graph(log)
    ctx = _Context(log, registry, metadata, cfg, labels)
    wallets = log.wallets()
    base = {w: base_profile(w, ctx) for w in wallets}
    preds = _predicates(cfg)
    values = np.zeros((len(wallets), N_FEATURES))
    for i, w in enumerate(wallets):
        row = dict(base[w])
        row.update(derived_network_features(w, ctx, g, base, preds))
        values[i] = [row[n] for n in FEATURE_NAMES]
    return FeatureMatrix(wallets, values)
