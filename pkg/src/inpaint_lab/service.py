"""HTTP JSON API bridging the job store to the trajectory-studio UI.

Endpoints:
    POST   /api/jobs               submit a JobSpec        -> 202 {id}
    GET    /api/jobs               list records
    GET    /api/jobs/{id}          one record              -> 404 unknown
    GET    /api/jobs/{id}/frames/{k}.png                   -> 404 until done
    GET    /api/vocab              token inventory
    DELETE /api/jobs/{id}          cancel (queued only)    -> 409 otherwise
Static files (the UI bundle) are served from `static_dir` when configured.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import ValidationError
from .jobs import JobSpec, JobStore, Worker
from .synth import Vocabulary

_FRAME_RE = re.compile(r"^/api/jobs/([\w-]+)/frames/(\d+)\.png$")
_JOB_RE = re.compile(r"^/api/jobs/([\w-]+)$")

_CONTENT_TYPES = {
    ".html": "text/html", ".js": "text/javascript", ".css": "text/css",
    ".json": "application/json", ".png": "image/png", ".svg": "image/svg+xml",
    ".map": "application/json", ".ts": "text/plain",
}


class ApiServer:
    def __init__(self, home, static_dir=None):
        self.store = JobStore(home)
        self.worker = Worker(self.store)
        self.static_dir = Path(static_dir) if static_dir else None
        self.httpd = None

    def start(self, host="127.0.0.1", port=0):
        self.worker.recover()
        self.worker.start()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                pass

            def _send(self, code, payload, content_type="application/json"):
                body = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(code)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(body)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                server.handle_get(self)

            def do_POST(self):
                server.handle_post(self)

            def do_DELETE(self):
                server.handle_delete(self)

            def do_OPTIONS(self):
                self.send_response(204)
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Access-Control-Allow-Methods", "GET,POST,DELETE,OPTIONS")
                self.send_header("Access-Control-Allow-Headers", "Content-Type")
                self.end_headers()

        self.httpd = ThreadingHTTPServer((host, port), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()
        return self.httpd.server_address

    def stop(self):
        if self.httpd:
            self.httpd.shutdown()
        self.worker.stop()

    # -- handlers -------------------------------------------------------
    def handle_get(self, req):
        path = req.path
        if path == "/api/jobs":
            req._send(200, [r.to_dict() for r in self.store.list_records()])
            return
        if path == "/api/vocab":
            req._send(200, {
                "tokens": list(Vocabulary.TOKENS),
                "colors": list(Vocabulary.COLORS),
                "shapes": list(Vocabulary.SHAPES),
            })
            return
        m = _FRAME_RE.match(path)
        if m:
            job_id, k = m.group(1), int(m.group(2))
            rec = self.store.read_record(job_id)
            if rec is None or rec.status != "done":
                req._send(404, {"error": "frame not available"})
                return
            frame = self.store.job_dir(job_id) / "frames" / f"{k}.png"
            if not frame.exists():
                req._send(404, {"error": "no such frame"})
                return
            req._send(200, frame.read_bytes(), content_type="image/png")
            return
        m = _JOB_RE.match(path)
        if m:
            rec = self.store.read_record(m.group(1))
            if rec is None:
                req._send(404, {"error": "unknown job"})
            else:
                req._send(200, rec.to_dict())
            return
        if self.static_dir is not None:
            self._serve_static(req, path)
            return
        req._send(404, {"error": "not found"})

    def _serve_static(self, req, path):
        rel = "index.html" if path in ("/", "") else path.lstrip("/")
        target = (self.static_dir / rel).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            req._send(404, {"error": "not found"})
            return
        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        req._send(200, target.read_bytes(), content_type=ctype)

    def handle_post(self, req):
        if req.path != "/api/jobs":
            req._send(404, {"error": "not found"})
            return
        length = int(req.headers.get("Content-Length", 0))
        try:
            body = json.loads(req.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            req._send(400, {"errors": {"body": "invalid JSON"}})
            return
        try:
            spec = JobSpec.from_dict(body)
        except ValidationError as exc:
            req._send(400, {"errors": exc.field_errors})
            return
        record = self.worker.submit(spec)
        req._send(202, {"id": record.id})

    def handle_delete(self, req):
        m = _JOB_RE.match(req.path)
        if not m:
            req._send(404, {"error": "not found"})
            return
        rec = self.store.read_record(m.group(1))
        if rec is None:
            req._send(404, {"error": "unknown job"})
            return
        if rec.status != "queued":
            req._send(409, {"error": f"job is {rec.status}; only queued jobs can be deleted"})
            return
        rec.status = "failed"
        rec.error = "cancelled"
        self.store.write_record(rec)
        req._send(204, b"", content_type="text/plain")


def serve(home, host="127.0.0.1", port=8787, static_dir=None, block=True):
    server = ApiServer(home, static_dir=static_dir)
    addr = server.start(host, port)
    print(f"inpaint-lab API listening on http://{addr[0]}:{addr[1]}", flush=True)
    if block:
        try:
            server.thread.join()
        except KeyboardInterrupt:
            server.stop()
    return server, addr
