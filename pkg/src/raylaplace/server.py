"""HTTP render service steering the interactive clean-up viewer.

GET endpoints (JSON + PNG over HTTP/1.1):
  /healthz                 liveness probe
  /meta                    box, lattice resolution, log-sigma range, default camera
  /render?pose=<12 csv>&fx=&fy=&w=&h=&channel=rgb|unc|depth|filtered&threshold=
                           PNG for color-like channels, raw float plane for depth

Renders are synchronous, bounded in size, and pure: identical queries return
identical bytes. RAYLAPLACE_THREADS caps concurrent render workers.
"""

from __future__ import annotations

import io
import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image

from . import renderer
from .colormap import apply_colormap
from .errors import RayLaplaceError

MAX_RENDER_SIZE = 512
CHANNELS = ("rgb", "unc", "depth", "filtered")


class QueryError(ValueError):
    """Maps to HTTP 400."""


def _png_bytes(rgb):
    data = np.floor(np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _plane_bytes(plane):
    import struct
    arr = np.ascontiguousarray(plane, dtype=np.float32)[..., None]
    h, w, c = arr.shape
    return b"IMGF" + struct.pack("<3I", w, h, c) + arr.tobytes()


class RenderService:
    """Owns the loaded artifacts and renders queries; safe for concurrent use."""

    def __init__(self, field, uncertainty, samples_per_ray=96, workers=None):
        self.field = field
        self.uncertainty = uncertainty
        self.samples_per_ray = samples_per_ray
        self.ready = True
        if workers is None:
            workers = int(os.environ.get("RAYLAPLACE_THREADS", "0")) or min(4, os.cpu_count() or 1)
        self._gate = threading.BoundedSemaphore(max(1, workers))

    def default_camera(self, width=256, height=256):
        bounds = self.field.bounds
        distance = 1.6 * float(np.max(bounds.extent))
        az, el = np.deg2rad(30.0), np.deg2rad(25.0)
        pos = bounds.center + distance * np.array(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        focal = 1.2 * width
        return renderer.look_at_camera(pos, bounds.center, focal, focal, width, height)

    def meta(self):
        cam = self.default_camera()
        return {
            "aabb": [self.field.bounds.min_corner.tolist(), self.field.bounds.max_corner.tolist()],
            "M": self.uncertainty.resolution,
            "log_sigma_range": [self.uncertainty.log_sigma_min, self.uncertainty.log_sigma_max],
            "default_camera": {
                "pose": cam.pose12,
                "fx": cam.fx, "fy": cam.fy,
                "width": cam.width, "height": cam.height,
            },
        }

    def _parse_camera(self, q):
        try:
            pose = [float(v) for v in q["pose"][0].split(",")]
            fx = float(q["fx"][0])
            fy = float(q["fy"][0])
            w = int(q["w"][0])
            h = int(q["h"][0])
        except (KeyError, IndexError, ValueError) as e:
            raise QueryError(f"missing or malformed camera parameter ({e})") from e
        if len(pose) != 12:
            raise QueryError("pose must be 12 comma-separated floats")
        if not (1 <= w <= MAX_RENDER_SIZE and 1 <= h <= MAX_RENDER_SIZE):
            raise QueryError(f"render size limited to {MAX_RENDER_SIZE}")
        try:
            return renderer.Camera.from_pose12(pose, fx, fy, w / 2.0, h / 2.0, w, h)
        except RayLaplaceError as e:
            raise QueryError(str(e)) from e

    def render(self, q):
        """Returns (content_type, payload) for a parsed /render query dict."""
        channel = q.get("channel", ["rgb"])[0]
        if channel not in CHANNELS:
            raise KeyError(channel)  # 404
        cam = self._parse_camera(q)
        threshold = None
        if "threshold" in q:
            try:
                threshold = float(q["threshold"][0])
            except ValueError as e:
                raise QueryError("threshold must be a float") from e
        if channel == "filtered" and threshold is None:
            raise QueryError("the filtered channel needs a threshold")

        opts = renderer.RenderOptions(
            samples_per_ray=self.samples_per_ray,
            threshold=threshold if channel == "filtered" else None,
        )
        needs_unc = channel in ("unc", "filtered")
        with self._gate:
            img = renderer.render_channels(self.field, cam, opts,
                                           uncertainty=self.uncertainty if needs_unc else None)
        if channel in ("rgb", "filtered"):
            return "image/png", _png_bytes(img.rgb)
        if channel == "depth":
            return "application/octet-stream", _plane_bytes(img.depth)
        # unc: display-normalize the composited log-uncertainty
        span = self.uncertainty.log_sigma_max - self.uncertainty.log_sigma_min
        mean_log = img.log_uncertainty / np.maximum(img.opacity, 1e-10)
        norm = (mean_log - self.uncertainty.log_sigma_min) / span if span > 0 else mean_log * 0
        norm = np.clip(norm, 0.0, 1.0) * (img.opacity > 0.01)
        return "image/png", _png_bytes(apply_colormap(norm))


class _Handler(BaseHTTPRequestHandler):
    service: RenderService = None
    quiet = True

    def log_message(self, fmt, *args):
        if not self.quiet:
            super().log_message(fmt, *args)

    def _send(self, status, content_type, payload):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(payload)

    def _send_error(self, status, message):
        self._send(status, "application/json",
                   json.dumps({"error": message}).encode())

    def do_GET(self):
        url = urlparse(self.path)
        if self.service is None or not self.service.ready:
            self._send_error(503, "artifacts still loading")
            return
        try:
            if url.path == "/healthz":
                self._send(200, "text/plain", b"ok")
            elif url.path == "/meta":
                self._send(200, "application/json", json.dumps(self.service.meta()).encode())
            elif url.path == "/render":
                try:
                    content_type, payload = self.service.render(parse_qs(url.query))
                except KeyError as e:
                    self._send_error(404, f"unknown channel {e}")
                except QueryError as e:
                    self._send_error(400, str(e))
                else:
                    self._send(200, content_type, payload)
            else:
                self._send_error(404, f"no route {url.path}")
        except BrokenPipeError:
            pass


def create_server(field, uncertainty, port=0, samples_per_ray=96, host="127.0.0.1"):
    """Bind a threading HTTP server around a RenderService; caller runs it."""
    service = RenderService(field, uncertainty, samples_per_ray=samples_per_ray)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    return server, service


def serve_forever(field, uncertainty, port, samples_per_ray=96):
    server, _ = create_server(field, uncertainty, port=port, samples_per_ray=samples_per_ray)
    print(f"serving on http://{server.server_address[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0
