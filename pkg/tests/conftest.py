import sys

import pytest

from stableaml.ingest import LabelRegistry, parse_transfers
from factories import addr, ev, transfers_csv
from stableaml.ingest import EventLog

LARGE_TRANSFER_ROW = (
    "0xf8163c3d5ba77186ad4c6c93c4f3f92a88adb1b55cd0da34de2a44d33d4e20bd", 0, "USDT",
    "0x654Fae4aa229d104CAbead47e56703f58b174bE4", "0x000000000035B5e5ad9019092C665357240f594e",
    "1092761.61", "2024-01-31 11:59:59",
)

BURST_SENDER = "0x03d09ec664f9241b23223240a06079300de1b14d"
BURST_RECIPIENT = "0xeFd2fd5c18093030E15a08fF8799BEC9c612Ec4f"
BURST_ROWS = [
    ("0xeb073c65c481114289e8aa63d86ca36ae79854eb270b58ce12961c4d41666124", "2025-08-08 03:04:47"),
    ("0x16a3e2bb4c73bc50324b3ba24ae391ae3ead13e90deed2ea835f3c1fb4e780cb", "2025-08-08 03:04:59"),
    ("0x74b8321b5c8817e0dc00c21907e8a85673f1762caa21a3d52328ca6421db6e59", "2025-08-08 03:20:11"),
    ("0xb4a930b2e5aaf8d09055fea6eda1a134cb1524ba6be86418119eb1714d4329a1", "2025-08-08 03:20:23"),
]


@pytest.fixture
def large_transfer_log():
    return parse_transfers(transfers_csv([LARGE_TRANSFER_ROW]))


@pytest.fixture
def burst_log():
    rows = [(h, 0, "USDT", BURST_SENDER, BURST_RECIPIENT, "50000", ts) for h, ts in BURST_ROWS]
    return parse_transfers(transfers_csv(rows))


class Chain:
    """Mixer withdrawal, two intermediary hops, then an exchange deposit (26 minutes)."""

    mixer = addr(0x16)
    i1 = addr(0xE434)
    i2 = addr(0xCC6C)
    cex = addr(0x0149E)


@pytest.fixture
def layering_chain():
    t = 1_704_084_240  # 04:44 UTC
    c = Chain
    log = EventLog([
        ev(1, c.mixer, c.i1, 90, t),
        ev(2, c.i1, c.i2, 82.416, t + 20 * 60),
        ev(3, c.i2, c.cex, 82.416, t + 26 * 60),
    ])
    registry = LabelRegistry({c.mixer: {"mixer", "flagged"}, c.cex: {"cex", "kyc"}})
    return log, registry, c


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
