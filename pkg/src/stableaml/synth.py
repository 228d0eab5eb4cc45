"""Seeded generator of labeled synthetic corpora with planted laundering typologies.

All randomness comes from one ``numpy.random.Generator`` over the Philox4x64-10
counter-based bit generator keyed by ``SynthConfig.seed``; draws happen in a
fixed order, so a seed reproduces the corpus byte for byte.

Templates
---------
normal
    CEX on/off-ramp flows plus occasional DeFi/payment use and benign peer
    transfers. A ``decoy_rate`` share additionally shows one illicit-looking
    trait (an inflow from a flagged address, a same-value burst or a large
    round transfer).
cybercrime
    Layering chains: mixer withdrawal -> 2-4 intermediary hops (each forwarding
    the bulk after skimming a fee) -> CEX or swap, all inside 30 minutes.
    Chain heads additionally receive same-value bursts from one source.
blocklisted
    Direct CEX placement and smart-contract use, then no activity after a
    per-wallet freeze date.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .graphstore import build_graph, density
from .ingest import (
    UNIT,
    AddressMetadata,
    EventLog,
    LabelRegistry,
    MetadataTable,
    TransferEvent,
    format_transfers,
    parse_label_registry,
    parse_metadata,
    parse_transfers,
    parse_wallet_labels,
    write_label_registry,
    write_metadata,
    write_wallet_labels,
)

START = 1_704_067_200  # 2024-01-01T00:00:00Z
MINUTE, HOUR, DAY = 60, 3600, 86_400

# service kind -> (count, registry categories, is_contract, is_verified)
SERVICES = {
    "cex": (8, ("cex", "kyc"), False, False),
    "swap": (4, ("swap", "defi"), True, True),
    "dex": (3, ("dex",), True, True),
    "lending": (3, ("lending", "defi"), True, True),
    "permissioned": (1, ("lending", "defi", "kyc"), True, True),
    "stake": (2, ("stake",), True, True),
    "defi": (3, ("defi",), True, True),
    "payment": (3, ("payment",), False, False),
    "bet": (2, ("bet",), True, False),
    "custody": (2, ("custody",), False, False),
    "airdrop": (2, ("airdrop",), True, True),
    "dao": (2, ("dao",), True, True),
    "exploiter": (4, ("flagged",), False, False),
}


@dataclass(frozen=True)
class SynthConfig:
    n_wallets: int = 5000
    class_proportions: tuple = (0.487, 0.365, 0.148)
    seed: int = 7
    span_days: int = 90
    n_mixers: int = 2
    burst_size: int = 4
    hop_range: tuple = (2, 4)
    extra_chains_per_wallet: float = 0.5
    noise_rate: float = 3.0
    decoy_rate: float = 0.05
    defi_native_share: float = 0.4
    hybrid_rate: float = 0.05
    dormant_rate: float = 0.0
    peer_homophily: float | None = None
    community_rate: float = 0.0

    def __post_init__(self):
        p = self.class_proportions
        if len(p) != 3 or any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-9:
            raise ConfigError(f"class proportions must be three non-negative fractions summing to 1, got {p}")
        if self.n_wallets < 10:
            raise ConfigError("n_wallets must be >= 10")
        if self.burst_size < 3:
            raise ConfigError("burst_size must be >= 3 to register as a same-value group")
        lo, hi = self.hop_range
        if not 2 <= lo <= hi:
            raise ConfigError("hop_range must satisfy 2 <= low <= high")
        if self.n_mixers < 1 or self.span_days < 1:
            raise ConfigError("need at least one mixer and a positive span")
        for name in ("noise_rate", "decoy_rate", "dormant_rate", "community_rate", "hybrid_rate", "extra_chains_per_wallet"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.dormant_rate > 1:
            raise ConfigError("dormant_rate must lie in [0, 1]")
        if self.peer_homophily is not None and not 0 <= self.peer_homophily <= 1:
            raise ConfigError("peer_homophily must lie in [0, 1]")


@dataclass
class SynthCorpus:
    log: EventLog
    registry: LabelRegistry
    metadata: MetadataTable
    labels: dict
    manifest: dict = field(default_factory=dict)

    def files(self) -> dict[str, str]:
        """The serialized ingest-format files plus ``manifest.json``."""
        out = {"transfers.csv": format_transfers(self.log.events)}
        for name, writer, obj in (
            ("registry.csv", write_label_registry, self.registry),
            ("labels.csv", write_wallet_labels, self.labels),
            ("metadata.csv", write_metadata, self.metadata),
        ):
            buf = io.StringIO()
            writer(obj, buf)
            out[name] = buf.getvalue()
        out["manifest.json"] = json.dumps(self.manifest, indent=1, sort_keys=True) + "\n"
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, text in sorted(self.files().items()):
            h.update(name.encode())
            h.update(b"\0")
            h.update(text.encode())
        return h.hexdigest()

    def write(self, out_dir) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for name, text in sorted(self.files().items()):
            path = os.path.join(out_dir, name)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            paths.append(path)
        return paths


def dense_preset(seed: int = 7, n_wallets: int = 2000) -> SynthConfig:
    """Dense, class-homophilous corpus where most suspicious wallets are dormant.

    Node features alone are only moderately informative here; the rest of
    the class signal lives in who trades with whom.
    """
    return SynthConfig(n_wallets=n_wallets, seed=seed, dormant_rate=0.7, peer_homophily=0.9,
                       community_rate=5.0)


def load_corpus(in_dir) -> SynthCorpus:
    j = lambda n: os.path.join(in_dir, n)  # noqa: E731
    manifest = {}
    if os.path.exists(j("manifest.json")):
        with open(j("manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        manifest.pop("run", None)
    return SynthCorpus(
        log=parse_transfers(j("transfers.csv")),
        registry=parse_label_registry(j("registry.csv")) if os.path.exists(j("registry.csv")) else LabelRegistry(),
        metadata=parse_metadata(j("metadata.csv")) if os.path.exists(j("metadata.csv")) else MetadataTable(),
        labels=parse_wallet_labels(j("labels.csv")) if os.path.exists(j("labels.csv")) else {},
        manifest=manifest,
    )


def apportion(n: int, proportions) -> tuple[int, ...]:
    """Largest-remainder apportionment of ``n`` items; ties go to the lower index."""
    quotas = [n * p for p in proportions]
    counts = [math.floor(q) for q in quotas]
    rest = n - sum(counts)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return tuple(counts)


class _Builder:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.Generator(np.random.Philox(cfg.seed))
        self.events: list[TransferEvent] = []
        self.used_addresses: set[str] = set()
        self.end = START + cfg.span_days * DAY

    def address(self) -> str:
        while True:
            a = "0x" + self.rng.bytes(20).hex()
            if a not in self.used_addresses:
                self.used_addresses.add(a)
                return a

    def transfer(self, sender, recipient, amount, t, token=None):
        t = int(min(max(t, START), self.end))
        if token is None:
            token = "USDT" if self.rng.random() < 0.7 else "USDC"
        self.events.append(TransferEvent(
            tx_hash="0x" + self.rng.bytes(32).hex(), log_index=0, token=token,
            sender=sender, recipient=recipient, amount=int(amount), timestamp=t))

    def amount(self, median=300.0, sigma=1.2):
        """Log-normal token amount, rounded to cents, in base units."""
        v = median * math.exp(sigma * self.rng.standard_normal())
        return max(1, int(round(v * 100))) * (UNIT // 100)

    def time(self, lo=None, hi=None):
        lo = START if lo is None else lo
        hi = self.end if hi is None else hi
        return int(self.rng.integers(lo, max(lo + 1, hi)))

    def pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]


def generate_corpus(cfg: SynthConfig = SynthConfig()) -> SynthCorpus:
    n_norm, n_cyber, n_block = apportion(cfg.n_wallets, cfg.class_proportions)
    if 0 < n_cyber < cfg.hop_range[0]:
        raise ConfigError(f"{n_cyber} cybercrime wallets cannot fill a {cfg.hop_range[0]}-hop chain")
    b = _Builder(cfg)
    rng = b.rng

    services: dict[str, list[str]] = {}
    registry: dict[str, set] = {}
    metadata = MetadataTable()
    for kind, (count, cats, is_contract, is_verified) in SERVICES.items():
        services[kind] = [b.address() for _ in range(count)]
        for a in services[kind]:
            registry[a] = set(cats)
            metadata[a] = AddressMetadata(is_contract, is_verified, known=True)
    services["mixer"] = [b.address() for _ in range(cfg.n_mixers)]
    for a in services["mixer"]:
        registry[a] = {"mixer", "flagged"}
        metadata[a] = AddressMetadata(True, True, known=True)
    contracts = [a for a, m in metadata.items() if m.is_contract and "mixer" not in registry[a]]

    normal = [b.address() for _ in range(n_norm)]
    cyber = [b.address() for _ in range(n_cyber)]
    block = [b.address() for _ in range(n_block)]
    labels = {a: 0 for a in normal} | {a: 1 for a in cyber} | {a: 2 for a in block}
    for a in labels:
        metadata[a] = AddressMetadata(False, False, known=True)
    typologies: dict[str, list] = {a: [] for a in labels}
    by_class = (normal, cyber, block)
    everyone = normal + cyber + block

    # normal template: CEX-centric retail users or DeFi natives, never both
    defi_kinds = ("swap", "dex", "lending", "defi", "stake")

    def normal_footprint(w):
        if rng.random() < cfg.defi_native_share:
            for _ in range(1 + rng.poisson(2.0)):
                b.transfer(b.pick(services[b.pick(defi_kinds)]), w, b.amount(400, 1.3), b.time())
            for _ in range(1 + rng.poisson(2.0)):
                b.transfer(w, b.pick(services[b.pick(defi_kinds)]), b.amount(300, 1.3), b.time())
            for kind, p in (("permissioned", 0.5), ("airdrop", 0.15), ("dao", 0.1), ("bet", 0.1)):
                if rng.random() < p:
                    b.transfer(b.pick(services[kind]), w, b.amount(100), b.time())
            typologies[w].append({"type": "defi_native"})
        else:
            for _ in range(1 + rng.poisson(2.0)):
                b.transfer(b.pick(services["cex"]), w, b.amount(400, 1.3), b.time())
            for _ in range(rng.poisson(1.5)):
                b.transfer(w, b.pick(services["cex"]), b.amount(300, 1.3), b.time())
            for kind, p in (("payment", 0.5), ("custody", 0.1)):
                if rng.random() < p:
                    for _ in range(1 + rng.poisson(1.0)):
                        b.transfer(w, b.pick(services[kind]), b.amount(200), b.time())
            if rng.random() < cfg.hybrid_rate:
                b.transfer(w, b.pick(contracts), b.amount(300, 1.3), b.time())
                typologies[w].append({"type": "hybrid"})
            typologies[w].append({"type": "cex_flow"})

    # dormant suspicious wallets skip their typology and look like normal users;
    # their label is only visible through whom they trade with
    dormant = set()
    if cfg.dormant_rate:
        for w in cyber + block:
            if rng.random() < cfg.dormant_rate:
                dormant.add(w)
        active_cyber = [w for w in cyber if w not in dormant]
        if 0 < len(active_cyber) < cfg.hop_range[0]:
            dormant -= set(cyber[: cfg.hop_range[0]])
    for w in normal + [w for w in cyber + block if w in dormant]:
        normal_footprint(w)
        if w in dormant:
            typologies[w].append({"type": "dormant"})
            continue
        if rng.random() < cfg.decoy_rate:
            trait = ("flagged", "burst", "large")[int(rng.integers(3))]
            t = b.time()
            if trait == "flagged":
                b.transfer(b.pick(services["exploiter"]), w, b.amount(2000), t)
            elif trait == "burst":
                src = b.pick(everyone)
                amt = b.amount(1000)
                for k in range(cfg.burst_size):
                    b.transfer(src, w, amt, t + k * int(rng.integers(10, 300)))
            else:
                b.transfer(b.pick(services["cex"]), w, int(rng.integers(11, 60)) * 1000 * UNIT, t)
            typologies[w].append({"type": "decoy", "trait": trait})

    # cybercrime template: partition into chains, then extra random chains
    lo, hi = cfg.hop_range
    active = [w for w in cyber if w not in dormant]
    order = [active[i] for i in rng.permutation(len(active))] if active else []
    chains = []
    i = 0
    while i < len(order):
        length = int(rng.integers(lo, hi + 1))
        chunk = order[i:i + length]
        i += length
        if len(chunk) < lo:
            fill = [c for c in active if c not in chunk]
            while len(chunk) < lo:
                chunk.append(fill[int(rng.integers(len(fill)))])
                fill.remove(chunk[-1])
        chains.append(chunk)
    for _ in range(int(round(cfg.extra_chains_per_wallet * len(active) / ((lo + hi) / 2)))):
        length = int(rng.integers(lo, hi + 1))
        idx = rng.choice(len(active), size=length, replace=False)
        chains.append([active[int(j)] for j in idx])
    for cid, chain in enumerate(chains):
        t = b.time(START, b.end - HOUR)
        t0 = t
        amount = int(rng.choice([100, 1000, 10_000, 100_000], p=[0.3, 0.35, 0.25, 0.1])) * UNIT
        b.transfer(b.pick(services["mixer"]), chain[0], amount, t)
        for pos in range(1, len(chain)):
            t += int(rng.integers(2 * MINUTE, 7 * MINUTE))
            amount = int(amount * (1 - rng.uniform(0.0, 0.1)))
            b.transfer(chain[pos - 1], chain[pos], amount, t)
        t += int(rng.integers(2 * MINUTE, 7 * MINUTE))
        exit_kind = "cex" if rng.random() < 0.35 else "swap"
        b.transfer(chain[-1], b.pick(services[exit_kind]), int(amount * (1 - rng.uniform(0.0, 0.05))), t)
        for pos, w in enumerate(chain):
            typologies[w].append({"type": "layering", "chain": cid, "position": pos + 1,
                                  "hops": len(chain), "span_seconds": t - t0, "exit": exit_kind})
    for w in active:
        # only the second wallet of a chain sits next to a mixer-facing wallet
        near_mixer = any(x["position"] == 2 for x in typologies[w] if x["type"] == "layering")
        if not near_mixer or rng.random() < 0.3:
            src = b.pick([c for c in active if c != w] + services["exploiter"])
            amt = int(rng.choice([5_000, 10_000, 50_000])) * UNIT
            t = b.time(START, b.end - HOUR)
            for k in range(cfg.burst_size):
                b.transfer(src, w, amt, t + k * int(rng.integers(10, 300)))
            typologies[w].append({"type": "burst", "source": src, "count": cfg.burst_size})
        for _ in range(rng.poisson(1.0)):
            b.transfer(w, b.pick(services["swap"] + services["dex"]), b.amount(2000), b.time())
        if rng.random() < 0.3:
            b.transfer(w, b.pick(services["bet"]), b.amount(500), b.time())

    # blocklisted template: both the CEX and the DeFi footprints of a normal
    # wallet, all before the freeze date; either footprint alone looks normal
    for w in block:
        if w in dormant:
            continue
        freeze = b.time(START + int(0.3 * cfg.span_days * DAY), START + int(0.9 * cfg.span_days * DAY))
        src = b.pick(services["cex"])
        for _ in range(1 + rng.poisson(2.0)):
            b.transfer(src if rng.random() < 0.7 else b.pick(services["cex"]), w,
                       b.amount(500, 1.3), b.time(START, freeze))
        for _ in range(rng.poisson(1.5)):
            b.transfer(w, b.pick(services["cex"]), b.amount(300, 1.3), b.time(START, freeze))
        for _ in range(1 + rng.poisson(2.0)):
            b.transfer(b.pick(services[b.pick(defi_kinds)]), w, b.amount(400, 1.3), b.time(START, freeze))
        for _ in range(1 + rng.poisson(2.0)):
            b.transfer(w, b.pick(services[b.pick(defi_kinds)]), b.amount(400, 1.3), b.time(START, freeze))
        if rng.random() < 0.15:
            b.transfer(b.pick(services["exploiter"]), w, b.amount(2_000, 1.0), b.time(START, freeze))
        typologies[w].append({"type": "placement_freeze", "freeze_timestamp": freeze})

    # benign peer noise (and optional class-homophilous communities)
    cls_of = labels
    for w in everyone:
        n_peer = rng.poisson(cfg.noise_rate + cfg.community_rate)
        for _ in range(n_peer):
            if cfg.peer_homophily is not None and rng.random() < cfg.peer_homophily:
                pool = by_class[cls_of[w]]
            else:
                pool = everyone
            peer = b.pick(pool)
            if peer == w:
                continue
            b.transfer(w, peer, b.amount(150), b.time())

    log = EventLog(b.events)
    manifest = {
        "generator": "stableaml.synth",
        "rng": "numpy Generator(Philox4x64-10)",
        "config": asdict(cfg),
        "class_counts": {"normal": n_norm, "cybercrime": n_cyber, "blocklisted": n_block},
        "chains": len(chains),
        "wallets": {a: typologies[a] for a in sorted(typologies)},
    }
    return SynthCorpus(log=log, registry=LabelRegistry(registry), metadata=metadata,
                       labels=dict(sorted(labels.items())), manifest=manifest)


def corpus_stats(c: SynthCorpus) -> dict:
    counts = [0, 0, 0]
    for v in c.labels.values():
        counts[v] += 1
    typology_counts: dict[str, int] = {}
    manifest_classes = {0: 0, 1: 0, 2: 0}
    for addr, items in c.manifest.get("wallets", {}).items():
        if addr in c.labels:
            manifest_classes[c.labels[addr]] += 1
        for t in items:
            typology_counts[t["type"]] = typology_counts.get(t["type"], 0) + 1
    mixers = c.registry.members("mixer")
    g = build_graph(c.log)
    return {
        "class_counts": {"normal": counts[0], "cybercrime": counts[1], "blocklisted": counts[2]},
        "manifest_class_counts": {"normal": manifest_classes[0], "cybercrime": manifest_classes[1],
                                  "blocklisted": manifest_classes[2]},
        "events": len(c.log),
        "nodes": len(g),
        "edges": len(g.edges),
        "density": density(g) if len(g) >= 2 else None,
        "mixer_interactions": sum(1 for e in c.log.events if e.sender in mixers or e.recipient in mixers),
        "typologies": dict(sorted(typology_counts.items())),
    }
