import logging
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from product_extract.classifier import FeaturizerConfig, TrainConfig, train
from product_extract.core import Dataset, ProductRecord, taxonomy_from_categories, GpcCategory

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(ROOT, "fixtures", "html")

SMALL_FEAT = FeaturizerConfig(hash_dims=2 ** 12)


def toy_taxonomy(k):
    return taxonomy_from_categories("toy", [
        GpcCategory("Seg", "Fam", f"Class {i}", f"Brick {i}", f"b{i}") for i in range(k)
    ])


def separable_dataset(n=200, k=2, seed=0, shop="s", language="de", flip=0.0):
    """Each class draws from its own disjoint vocabulary; optional label flips.

    Returns (dataset, true_labels) with true_labels aligned to records.
    """
    rng = np.random.default_rng(seed)
    vocab = [[f"c{c}w{j}" for j in range(25)] for c in range(k)]
    records, truth = [], []
    for i in range(n):
        c = i % k
        name = " ".join(rng.choice(vocab[c], size=3))
        desc = " ".join(rng.choice(vocab[c], size=8))
        records.append(ProductRecord(f"r{i:05d}", name, desc, shop, language, f"b{c}"))
        truth.append(f"b{c}")
    if flip:
        idx = rng.choice(n, size=int(flip * n), replace=False)
        for i in idx:
            r = records[i]
            new = f"b{(int(r.category[1:]) + 1) % k}"
            records[i] = ProductRecord(r.id, r.name, r.description, r.shop, r.language, new)
    return Dataset(tuple(records), provenance="toy"), truth


@pytest.fixture(scope="session")
def toy_model():
    ds, _ = separable_dataset(200, 3, seed=1)
    return train(ds, toy_taxonomy(3), TrainConfig(epochs=5, featurizer=SMALL_FEAT))


class _QueuedServer(ThreadingHTTPServer):
    request_queue_size = 128


class StubServer:
    """Local HTTP server whose routes map path -> (status, headers, body or callable)."""

    def __init__(self):
        self.routes = {}
        stub = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def do_GET(self):
                route = stub.routes.get(self.path)
                if route is None:
                    self.send_response(404)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                if callable(route):
                    route(self)
                    return
                status, headers, body = route
                self.send_response(status)
                for k, v in headers.items():
                    self.send_header(k, v)
                if "Content-Length" not in headers:
                    self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self.server = _QueuedServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)

    @property
    def base(self):
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def url(self, path):
        return self.base + path

    def start(self):
        self.thread.start()
        return self

    def stop(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub():
    s = StubServer().start()
    yield s
    s.stop()


def read_fixture(name):
    with open(os.path.join(FIXTURES, name), encoding="utf-8") as f:
        return f.read()


@pytest.fixture(autouse=True)
def _reset_package_logger():
    # the CLI installs its own handler and stops propagation; undo that so caplog keeps working
    logger = logging.getLogger("product_extract")
    handlers, propagate, level = logger.handlers[:], logger.propagate, logger.level
    yield
    logger.handlers[:] = handlers
    logger.propagate = propagate
    logger.setLevel(level)


ACCEPTANCE_RESULTS = []


def record_criterion(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
