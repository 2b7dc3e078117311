import socket
from pathlib import Path

import pytest

ASSETS = Path(__file__).resolve().parent.parent / "src" / "ragfuzz" / "assets"
DATA = Path(__file__).resolve().parent / "data"

_real_connect = socket.socket.connect


def _blocked_connect(self, *args, **kwargs):
    raise AssertionError(f"test suite attempted a network connection: {args}")


@pytest.fixture(autouse=True, scope="session")
def no_network():
    """The whole suite must run offline; any connect() attempt fails loudly."""
    socket.socket.connect = _blocked_connect
    yield
    socket.socket.connect = _real_connect


@pytest.fixture(scope="session")
def demo_assets():
    return {
        "rfc": ASSETS / "demo" / "mini_rfc.txt",
        "script": ASSETS / "demo" / "gateway_script.json",
        "seeds": ASSETS / "demo" / "seeds",
        "cve_fixtures": ASSETS / "cve_fixtures",
    }


@pytest.fixture(scope="session")
def corpus_files():
    return sorted((DATA / "corpus").glob("msg_*.bin"))


@pytest.fixture(scope="session")
def demo_gateway(demo_assets):
    from ragfuzz.llm_gateway import LlmGateway
    from ragfuzz.offline import DemoProvider

    def make():
        return LlmGateway(DemoProvider(demo_assets["script"]))

    return make


@pytest.fixture(scope="session")
def demo_index(demo_assets, demo_gateway, tmp_path_factory):
    """Chunk store + index built once from the fixture document."""
    from ragfuzz import knowledge_store as ks
    from ragfuzz import rfc_pipeline as rp

    out = tmp_path_factory.mktemp("demo_index")
    text = demo_assets["rfc"].read_text(encoding="utf-8")
    result = rp.run_pipeline(text, demo_gateway())
    store = out / "chunk_store.json"
    rp.write_chunk_store(store, result.chunks, result.propositions)
    chunks = ks.load_chunk_store(store)
    index = ks.build_index(chunks, ks.HashingEmbedder())
    index_path = out / "index.json"
    ks.persist_index(index, index_path)
    return {"index": index, "index_path": index_path, "store_path": store,
            "pipeline": result}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_criterion" in nodeid:
                name = nodeid.split("::")[-1]
                lines.append((name, status.upper()))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"{name}: {status}")
