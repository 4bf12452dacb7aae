from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from cirag.backend import ReplayBackend, Role
from cirag.corpus import read_corpus
from cirag.prompts import REFUSAL_CLAUSE

DATA = Path(__file__).parent / "data"
CASE_DIR = DATA / "case_study"
CASE_QUESTION = "Which film has the director who is older, God'S Gift To Women or Aldri Annet Enn Bråk?"
CASE_GOLD = "God'S Gift To Women"
CASE_CORE = {
    "(god s gift to women, directed by, michael curtiz)",
    "(aldri annet enn br k, directed by, edith carlmar)",
    "(edith carlmar, born on, 15 november 1911)",
    "(michael curtiz, born on, december 24 1886)",
}


@pytest.fixture
def case_backend() -> ReplayBackend:
    return ReplayBackend.from_file(CASE_DIR / "script.json")


@pytest.fixture
def case_docs():
    return read_corpus(CASE_DIR / "corpus.jsonl")


def role_of(prompt: str) -> Role:
    """Recover the role of a prompt from its template wording (for HTTP stubs)."""
    if "extract named entities" in prompt:
        return Role.NER
    if "construct an RDF" in prompt:
        return Role.TRIPLE_EXTRACT
    if "loop through collecting facts" in prompt:
        return Role.INTEGRATE
    if REFUSAL_CLAUSE.strip() not in prompt:
        return Role.READER_DEFAULT
    return Role.READER_TRIPLE


class StubServer:
    """Tiny OpenAI-compatible server driven by ``handler(path, body) -> (status, payload)``."""

    def __init__(self, handler, delay: float = 0.0):
        self.handler = handler
        self.delay = delay
        self.requests: list[dict] = []
        self.in_flight = 0
        self.max_in_flight = 0
        lock = threading.Lock()
        stub = self

        class _H(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with lock:
                    stub.requests.append({"path": self.path, "body": body,
                                          "auth": self.headers.get("Authorization")})
                    stub.in_flight += 1
                    stub.max_in_flight = max(stub.max_in_flight, stub.in_flight)
                try:
                    if stub.delay:
                        time.sleep(stub.delay)
                    status, payload = stub.handler(self.path, body)
                finally:
                    with lock:
                        stub.in_flight -= 1
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _H)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def chat_payload(text: str) -> dict:
    return {"choices": [{"message": {"content": text}}], "model": "stub",
            "usage": {"prompt_tokens": 3, "completion_tokens": 2}}
