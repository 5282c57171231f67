import pytest

from crowdsurf.collector import Collector, CollectorClient, make_server
from crowdsurf.trace import HttpRequestRecord


def rec(hostname="www.example.com", path="/", referer="", user="u1", ts=1.0, method="GET"):
    return HttpRequestRecord(ts, user, method, hostname, path, referer)


class FakeClock:
    def __init__(self, now=1_700_000_000.0):
        self.now = now

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def collector(clock):
    return Collector(clock=clock)


@pytest.fixture
def server(collector):
    srv = make_server(collector, "127.0.0.1", 0)
    srv.start_background()
    yield srv
    srv.shutdown()
    srv.server_close()


@pytest.fixture
def client(server):
    return CollectorClient(server.url)


ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
