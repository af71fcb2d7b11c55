"""HTTP API: POST /classify (URL or inline HTML) and GET /healthz."""

import json
import logging
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional, Tuple

from . import __version__
from .classifier import Model, predict
from .errors import EmptyName, FetchError, InvalidUrl, NoProductFound
from .extract import extract_product
from .fetch import FetchConfig, fetch

log = logging.getLogger(__name__)

DEFAULT_MAX_INFLIGHT_FETCHES = 8
LISTEN_BACKLOG = 128


class BadRequest(Exception):
    pass


class ClassifyService:
    """Request handling independent of the HTTP transport.

    The model is only read, never modified, so one instance can serve
    concurrent requests. Outbound fetches are capped by a semaphore.
    """

    def __init__(self, model: Model, fetch_config: Optional[FetchConfig] = None,
                 max_inflight_fetches: int = DEFAULT_MAX_INFLIGHT_FETCHES, max_request_bytes: Optional[int] = None):
        self.model = model
        self.fetch_config = fetch_config or FetchConfig.from_env()
        self.max_request_bytes = max_request_bytes or self.fetch_config.max_bytes
        self._fetch_slots = threading.BoundedSemaphore(max_inflight_fetches)
        self.fingerprint = model.fingerprint()

    def health(self) -> dict:
        return {"status": "ok", "model": self.fingerprint, "labels": len(self.model.labels), "version": __version__}

    def _html_for(self, payload) -> str:
        if not isinstance(payload, dict):
            raise BadRequest("body must be a JSON object")
        has_url, has_html = "url" in payload, "html" in payload
        if has_url == has_html:
            raise BadRequest('provide exactly one of "url" or "html"')
        key = "url" if has_url else "html"
        value = payload[key]
        if not isinstance(value, str) or not value:
            raise BadRequest(f'"{key}" must be a non-empty string')
        if has_html:
            return value
        with self._fetch_slots:
            return fetch(value, self.fetch_config).body

    def classify(self, payload) -> Tuple[int, dict]:
        try:
            html = self._html_for(payload)
            info = extract_product(html)
        except (BadRequest, InvalidUrl) as exc:
            return HTTPStatus.BAD_REQUEST, {"error": getattr(exc, "code", "BadRequest"), "message": str(exc)}
        except (NoProductFound, EmptyName) as exc:
            return HTTPStatus.UNPROCESSABLE_ENTITY, {"error": exc.code, "message": str(exc)}
        except FetchError as exc:
            return HTTPStatus.BAD_GATEWAY, {"error": exc.code, "message": str(exc)}

        pred = predict(self.model, info.name, info.description)
        return HTTPStatus.OK, {
            "name": info.name,
            "description": info.description,
            "syntax": info.syntax,
            "prediction": {
                "label": pred.label,
                "confidence": pred.confidence,
                "top": [{"label": label, "prob": prob} for label, prob in pred.top(5)],
            },
        }


class _Handler(BaseHTTPRequestHandler):
    service: ClassifyService  # set on the subclass built by make_server
    server_version = f"product-extract/{__version__}"
    protocol_version = "HTTP/1.1"

    def _send(self, status: int, body: dict) -> None:
        raw = json.dumps(body, ensure_ascii=False, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def do_GET(self):
        if self.path.split("?", 1)[0] == "/healthz":
            self._send(HTTPStatus.OK, self.service.health())
        else:
            self._send(HTTPStatus.NOT_FOUND, {"error": "NotFound", "message": self.path})

    def do_POST(self):
        if self.path.split("?", 1)[0] != "/classify":
            self._send(HTTPStatus.NOT_FOUND, {"error": "NotFound", "message": self.path})
            return
        length = self.headers.get("Content-Length")
        if length is None or not length.isdigit():
            self.close_connection = True
            self._send(HTTPStatus.LENGTH_REQUIRED, {"error": "LengthRequired", "message": "Content-Length required"})
            return
        if int(length) > self.service.max_request_bytes:
            self.close_connection = True
            self._send(HTTPStatus.REQUEST_ENTITY_TOO_LARGE,
                       {"error": "BodyTooLarge", "message": f"request body over {self.service.max_request_bytes} bytes"})
            return
        raw = self.rfile.read(int(length))
        try:
            payload = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            self._send(HTTPStatus.BAD_REQUEST, {"error": "BadRequest", "message": f"malformed JSON body: {exc}"})
            return
        status, body = self.service.classify(payload)
        self._send(status, body)

    def log_message(self, fmt, *args):
        log.info("%s - %s", self.address_string(), fmt % args)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    # the stdlib default of 5 resets connections under modest bursts
    request_queue_size = LISTEN_BACKLOG


def make_server(addr: Tuple[str, int], service: ClassifyService) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"service": service})
    return _Server(addr, handler)


def parse_addr(addr: str) -> Tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return (host or "127.0.0.1"), int(port)
