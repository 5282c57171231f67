"""JSON-over-HTTP front end for :class:`~crowdsurf.collector.store.Collector`.

Endpoints::

    POST /v1/register                      -> {contributor_id, epoch_salt, epoch_length_s}
    POST /v1/reports                       -> {accepted_count} | 400 | 401 | 413
    GET  /v1/query?target=H&from=T1&to=T2  -> [record, ...]           (admin)
    POST /v1/purge                         -> {purged}                (admin)

Admin endpoints require ``Authorization: Bearer <token>`` when the server
has an admin token configured.
"""

from __future__ import annotations

import base64
import hmac
import json
import logging
import math
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .store import Collector, CollectorError, PayloadTooLarge, ValidationError, batch_from_json, record_to_json

log = logging.getLogger(__name__)

MAX_RECORD_BYTES = 16_384


class CollectorHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, collector: Collector, admin_token: str | None = None):
        self.collector = collector
        self.admin_token = admin_token
        super().__init__(address, _Handler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="collector", daemon=True)
        t.start()
        return t


def make_server(collector: Collector, host: str = "127.0.0.1", port: int = 8080, admin_token: str | None = None):
    return CollectorHTTPServer((host, port), collector, admin_token)


def _float_param(qs: dict, name: str, default: float) -> float:
    raw = qs.get(name)
    if not raw:
        return default
    try:
        v = float(raw[0])
    except ValueError:
        raise ValidationError(f"{name} must be a number") from None
    if math.isnan(v):
        raise ValidationError(f"{name} must be a number")
    return v


class _Handler(BaseHTTPRequestHandler):
    server: CollectorHTTPServer
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, payload) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str) -> None:
        self._send(status, {"error": message})

    def _read_json(self):
        length = int(self.headers.get("Content-Length") or 0)
        limit = (self.server.collector.max_batch_records + 1) * MAX_RECORD_BYTES
        if length > limit:
            self.rfile.read(length)
            raise PayloadTooLarge("request body too large")
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return None
        try:
            return json.loads(raw)
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValidationError(f"malformed JSON: {exc}") from None

    def _is_admin(self) -> bool:
        token = self.server.admin_token
        if not token:
            return True
        given = self.headers.get("Authorization", "")
        return given.startswith("Bearer ") and hmac.compare_digest(given[7:], token)

    def _dispatch(self, routes: dict) -> None:
        path = urlsplit(self.path).path
        handler = routes.get(path)
        if handler is None:
            self._error(HTTPStatus.NOT_FOUND, f"no such endpoint {path}")
            return
        try:
            handler()
        except CollectorError as exc:
            self._error(exc.status, str(exc))
        except Exception:  # keep serving after a handler bug
            log.exception("unhandled error on %s", path)
            self._error(HTTPStatus.INTERNAL_SERVER_ERROR, "internal error")

    def do_POST(self):
        self._dispatch({"/v1/register": self._register, "/v1/reports": self._reports, "/v1/purge": self._purge})

    def do_GET(self):
        self._dispatch({"/v1/query": self._query})

    def _register(self):
        self._read_json()
        g = self.server.collector.register()
        self._send(
            HTTPStatus.OK,
            {
                "contributor_id": g.contributor_id,
                "epoch_salt": base64.b64encode(g.epoch_salt).decode("ascii"),
                "epoch_length_s": g.epoch_length,
            },
        )

    def _reports(self):
        batch = batch_from_json(self._read_json())
        accepted = self.server.collector.submit_batch(batch)
        self._send(HTTPStatus.OK, {"accepted_count": accepted})

    def _query(self):
        if not self._is_admin():
            self._error(HTTPStatus.UNAUTHORIZED, "admin token required")
            return
        qs = parse_qs(urlsplit(self.path).query)
        target = (qs.get("target") or [""])[0]
        if not target:
            raise ValidationError("target is required")
        records = self.server.collector.query_third_party(
            target, _float_param(qs, "from", -math.inf), _float_param(qs, "to", math.inf)
        )
        self._send(HTTPStatus.OK, [record_to_json(r) for r in records])

    def _purge(self):
        if not self._is_admin():
            self._error(HTTPStatus.UNAUTHORIZED, "admin token required")
            return
        self._read_json()
        self._send(HTTPStatus.OK, {"purged": self.server.collector.purge_expired()})
