import json

import pytest

from roundsim.config import parse_experiment


class FakeIface:
    """Stands in for NodeInterface in unit tests: records sends, serves a
    scripted inbox, and collects log records."""

    def __init__(self, peer_id=0, neighbors=()):
        self.peer_id = peer_id
        self.neighbors = sorted(neighbors)
        self.round = 0
        self.sent = []       # (targets tuple, msg)
        self.records = []
        self.inbox = []
        self.fault = None
        self.test_index = 0

    def unicast(self, dst, msg):
        self.sent.append(((dst,), msg))

    def multicast(self, targets, msg):
        targets = tuple(sorted(set(targets)))
        if targets:
            self.sent.append((targets, msg))

    def broadcast(self, msg):
        self.sent.append((tuple(self.neighbors), msg))

    def receive_all(self):
        inbox, self.inbox = self.inbox, []
        return inbox

    def log(self, level, tag, payload):
        self.records.append((level, tag, payload))


def make_config(**kw):
    doc = {
        "algorithm": kw.pop("algorithm", "abp"),
        "peerCount": kw.pop("peerCount", 2),
        "roundsPerTest": kw.pop("roundsPerTest", 50),
        "testsPerRun": kw.pop("testsPerRun", 1),
        "baseSeed": kw.pop("baseSeed", 42),
        "outputDir": kw.pop("outputDir", "unused"),
    }
    doc.update(kw)
    return parse_experiment(json.dumps(doc))


@pytest.fixture
def fake_iface():
    return FakeIface()
