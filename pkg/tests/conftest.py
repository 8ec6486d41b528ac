import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from arena_draws.domain import Battle, BattleStream, Outcome

# criterion number -> (status, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def make_stream(rows):
    """Stream from ``(model_a, model_b, outcome)`` triples."""
    return BattleStream(Battle(f"b{i}", i, a, b, y) for i, (a, b, y) in enumerate(rows))


@pytest.fixture
def tiny_stream():
    return make_stream(
        [
            ("x", "y", Outcome.WIN_A),
            ("y", "z", Outcome.DRAW),
            ("x", "z", Outcome.WIN_B),
            ("x", "y", Outcome.WIN_A),
        ]
    )


class StubAnnotator(BaseHTTPRequestHandler):
    """Chat-completions lookalike; replies with ``reply`` and records requests."""

    reply = "difficulty: 2, subjectivity: 3"
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((body, self.headers.get("Authorization")))
        payload = json.dumps({"choices": [{"message": {"content": type(self).reply}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    handler = type("Handler", (StubAnnotator,), {"seen": []})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield handler, f"http://127.0.0.1:{server.server_address[1]}/v1"
    server.shutdown()
    server.server_close()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status:4s} {detail}")
