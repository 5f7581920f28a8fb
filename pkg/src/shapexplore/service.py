"""HTTP exploration service with per-session state.

Sessions wrap one current shape each: creating a session encodes the
shape's sketch, maps it, and refines the code against the directly
encoded shape; setting a condition computes a direction; the trajectory
endpoint materializes candidates over requested step sizes (cached);
accepting a candidate makes it the session's current shape, re-runs the
refinement, clears the direction, and appends to the history.

Embedding/shape codes never leave the process: responses carry renders,
norms, similarities and oracle scores only.

Endpoints (JSON unless noted):
  POST /sessions                {"shape_id": ...} or a raw binary PGM body
  GET  /sessions/{id}
  POST /sessions/{id}/condition {"mode": "binary"|"text"|"sketch", ...}
  GET  /sessions/{id}/trajectory?alphas=a,b,c
  POST /sessions/{id}/accept    {"alpha": x}
  GET  /sessions/{id}/render/{alpha}   (binary PGM; alpha may be "current")
  GET  /health

Errors are JSON {code, message, detail} with 400 data / 404 missing /
409 state / 500 numeric.
"""

from __future__ import annotations

import base64
import json
import logging
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import __version__
from .config import RunConfig
from .coopt import CoOptResult, co_optimize
from .dataset import DataStore, decode_pgm, encode_pgm
from .errors import (
    ArgumentError,
    DataError,
    NumericError,
    ShapeXploreError,
    StateError,
)
from .explore import (
    Direction,
    TrajectoryCandidate,
    direction_from_sketch,
    direction_from_text,
    explore_trajectory,
    projection_gap,
    select_alpha_by_sketch,
)
from .metrics import DirectionCache, clip_similarity
from .procgen import (
    APPLICABLE_ATTRIBUTES,
    SketchImage,
    VoxelGrid,
    attribute_label,
    attribute_score,
    render_sketch,
)
from .spaces import ClipCode, SpaceBundle, encode_image, encode_shape
from .util import sha256_hex

log = logging.getLogger(__name__)


class NotFoundError(ShapeXploreError):
    pass


@dataclass
class ExplorationSession:
    id: str
    category: str | None  # None for uploaded sketches (no oracle scores)
    grid: VoxelGrid  # current shape, binary occupancy
    sketch: SketchImage  # rendering of the current shape
    code: ClipCode  # refined embedding code for the current shape
    target_shape_code: np.ndarray
    coopt: CoOptResult
    direction: Direction | None = None
    direction_stats: dict | None = None
    edited_code: ClipCode | None = None  # sketch-mode condition target
    candidates: dict[float, TrajectoryCandidate] = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    lock: threading.RLock = field(default_factory=threading.RLock)


def _round(x: float, nd: int = 6) -> float:
    return round(float(x), nd)


class ExplorationService:
    def __init__(self, bundle: SpaceBundle, store: DataStore, config: RunConfig):
        self.bundle = bundle
        self.store = store
        self.config = config
        self.mapper = bundle.require_mapper()
        self.directions = DirectionCache(bundle, store, config)
        self.sessions: dict[str, ExplorationSession] = {}
        self._lock = threading.Lock()
        self._counter = 0

    # -- session plumbing --------------------------------------------------

    def _refine(self, grid: VoxelGrid, sketch: SketchImage) -> tuple[ClipCode, np.ndarray, CoOptResult]:
        start = encode_image(self.bundle.image_encoder, sketch)
        z_bar = encode_shape(self.bundle.shape_encoder, grid)
        co = co_optimize(
            self.mapper, start, z_bar,
            iters=self.config.coopt.iters, lr=self.config.coopt.lr,
        )
        return co.code, z_bar, co

    def create_session(self, shape_id: str | None, sketch_pgm: bytes | None) -> dict:
        if (shape_id is None) == (sketch_pgm is None):
            raise DataError("provide exactly one of shape_id or a PGM sketch body")
        if shape_id is not None:
            try:
                rec = self.store.record(shape_id)
            except DataError as e:
                raise NotFoundError(str(e)) from e
            grid = self.store.voxels(shape_id)
            sketch = self.store.sketch(shape_id)
            category = rec.category
        else:
            sketch = decode_pgm(sketch_pgm, source="uploaded sketch")
            if sketch.width != self.bundle.sketch_width:
                raise DataError(
                    f"sketch must be {self.bundle.sketch_width}x{self.bundle.sketch_width}, "
                    f"got {sketch.width}x{sketch.width}"
                )
            category = None
            # no ground-truth shape: the refinement target is the mapped code's
            # own decode re-encoded, i.e. we trust the sketch alone
            code0 = encode_image(self.bundle.image_encoder, sketch)
            from .mapper import map_code
            from .spaces import decode_shape

            z0 = map_code(self.mapper, code0)
            grid = decode_shape(self.bundle.shape_decoder, z0, self.bundle.resolution).binarized()

        code, z_bar, co = self._refine(grid, sketch)
        with self._lock:
            self._counter += 1
            sid = f"s{self._counter:06d}"
            session = ExplorationSession(
                id=sid, category=category, grid=grid, sketch=sketch,
                code=code, target_shape_code=z_bar, coopt=co,
            )
            self.sessions[sid] = session
        return self.session_view(session)

    def get_session(self, sid: str) -> ExplorationSession:
        with self._lock:
            if sid not in self.sessions:
                raise NotFoundError(f"no session {sid!r}")
            return self.sessions[sid]

    def session_view(self, s: ExplorationSession) -> dict:
        return {
            "session_id": s.id,
            "category": s.category,
            "sketch_pgm": base64.b64encode(encode_pgm(s.sketch)).decode("ascii"),
            "code_norm": _round(s.code.norm()),
            "coopt": {
                "initial_loss": _round(s.coopt.initial_loss, 9),
                "final_loss": _round(s.coopt.final_loss, 9),
                "iterations": s.coopt.trace[-1][0],
            },
            "condition": None if s.direction is None else {
                "mode": s.direction.mode,
                "norm": _round(float(np.linalg.norm(s.direction.vector))),
                "stats": s.direction_stats,
            },
            "oracle_scores": self._oracle_scores(s, s.grid),
            "history": s.history,
        }

    def _oracle_scores(self, s: ExplorationSession, grid: VoxelGrid) -> dict | None:
        if s.category is None:
            return None
        return {
            name: _round(attribute_score(grid, attribute_label(s.category, name)))
            for name in APPLICABLE_ATTRIBUTES[s.category]
        }

    # -- operations ---------------------------------------------------------

    def set_condition(self, sid: str, payload: dict) -> dict:
        s = self.get_session(sid)
        with s.lock:
            mode = payload.get("mode")
            stats = None
            if mode == "binary":
                attribute = payload.get("attribute")
                if not attribute:
                    raise DataError("binary condition needs an attribute")
                if s.category is None:
                    raise StateError("binary conditions need a session with a known category")
                d = self.directions.binary_direction(s.category, attribute)
                if int(payload.get("sign", 1)) < 0:
                    d = d.negated()
                stats = self.directions.binary_stats(s.category, attribute)
            elif mode == "text":
                t_from, t_to = payload.get("caption_from"), payload.get("caption_to")
                if not (t_from and t_to):
                    raise DataError("text condition needs caption_from and caption_to")
                d = direction_from_text(self.bundle.text_encoder, self.bundle.vocab, t_from, t_to)
            elif mode == "sketch":
                b64 = payload.get("edited_sketch")
                if not b64:
                    raise DataError("sketch condition needs edited_sketch (base64 PGM)")
                try:
                    edited = decode_pgm(base64.b64decode(b64), source="edited sketch")
                except (ValueError, TypeError) as e:
                    raise DataError(f"bad base64 sketch payload: {e}") from e
                if edited.width != s.sketch.width:
                    raise DataError("edited sketch dimensions differ from the session sketch")
                d = direction_from_sketch(self.bundle.image_encoder, s.sketch, edited)
                s.edited_code = encode_image(self.bundle.image_encoder, edited)
            else:
                raise DataError(f"unknown condition mode {mode!r}")
            if d.degenerate:
                log.warning("session %s: degenerate direction (zero vector)", sid)
            s.direction = d
            s.direction_stats = stats
            if mode != "sketch":
                s.edited_code = None
            s.candidates.clear()
            return {
                "mode": d.mode,
                "norm": _round(float(np.linalg.norm(d.vector))),
                "degenerate": d.degenerate,
                "stats": stats,
            }

    def trajectory(self, sid: str, alphas: list[float]) -> dict:
        s = self.get_session(sid)
        with s.lock:
            if s.direction is None:
                raise StateError("no condition set; POST a condition first")
            missing = [a for a in alphas if a not in s.candidates]
            if missing:
                for cand in explore_trajectory(
                    self.mapper, self.bundle.shape_decoder, s.code, s.direction,
                    missing, self.bundle.resolution, self.bundle.sketch_width,
                ):
                    s.candidates[cand.alpha] = cand
            edited_code = s.edited_code
            out = []
            for a in sorted(float(x) for x in alphas):
                cand = s.candidates[a]
                if cand.similarity is None and edited_code is not None:
                    cand.similarity = clip_similarity(
                        encode_image(self.bundle.image_encoder, cand.sketch), edited_code
                    )
                out.append({
                    "alpha": _round(cand.alpha),
                    "code_norm": _round(cand.clip_code.norm()),
                    "similarity": None if cand.similarity is None else _round(cand.similarity),
                    "oracle_scores": self._oracle_scores(s, cand.grid.binarized()),
                    "sketch_pgm": base64.b64encode(encode_pgm(cand.sketch)).decode("ascii"),
                })
            selected = None
            if edited_code is not None:
                best = select_alpha_by_sketch(
                    self.bundle.image_encoder, list(s.candidates.values()), edited_code
                )
                selected = _round(best.alpha)
            return {"candidates": out, "selected_alpha": selected}

    def accept(self, sid: str, alpha: float) -> dict:
        s = self.get_session(sid)
        with s.lock:
            if s.direction is None:
                raise StateError("no condition set; nothing to accept")
            alpha = float(alpha)
            if alpha not in s.candidates:
                raise StateError(f"alpha {alpha} has not been materialized")
            cand = s.candidates[alpha]
            new_grid = cand.grid.binarized()
            new_sketch = render_sketch(new_grid, self.bundle.sketch_width)
            code, z_bar, co = self._refine(new_grid, new_sketch)
            s.history.append({
                "alpha": _round(alpha),
                "mode": s.direction.mode,
                "direction_norm": _round(float(np.linalg.norm(s.direction.vector))),
            })
            s.grid, s.sketch = new_grid, new_sketch
            s.code, s.target_shape_code, s.coopt = code, z_bar, co
            s.direction = None
            s.direction_stats = None
            s.edited_code = None
            s.candidates.clear()
            return self.session_view(s)

    def render(self, sid: str, alpha_str: str) -> bytes:
        s = self.get_session(sid)
        with s.lock:
            if alpha_str == "current":
                return encode_pgm(s.sketch)
            try:
                alpha = float(alpha_str)
            except ValueError as e:
                raise DataError(f"bad alpha {alpha_str!r}") from e
            if alpha not in s.candidates:
                raise StateError(f"alpha {alpha} has not been materialized")
            return encode_pgm(s.candidates[alpha].sketch)

    def health(self) -> dict:
        return {
            "status": "ok",
            "version": __version__,
            "hashes": self.bundle.hashes(),
            "sessions": len(self.sessions),
        }


# ---------------------------------------------------------------------------
# HTTP layer


_STATUS = {
    DataError: 400,
    ArgumentError: 400,
    NotFoundError: 404,
    StateError: 409,
    NumericError: 500,
}


def _status_for(e: Exception) -> int:
    for cls, code in _STATUS.items():
        if isinstance(e, cls):
            return code
    return 500


def make_handler(service: ExplorationService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

        def _send_json(self, obj: dict, status: int = 200) -> None:
            body = json.dumps(obj, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_error(self, e: Exception) -> None:
            status = _status_for(e)
            self._send_json(
                {"code": status, "message": type(e).__name__, "detail": str(e)},
                status=status,
            )

        def _read_body(self) -> bytes:
            length = int(self.headers.get("Content-Length", "0"))
            return self.rfile.read(length) if length else b""

        def _json_body(self) -> dict:
            raw = self._read_body()
            if not raw:
                return {}
            try:
                obj = json.loads(raw.decode("utf-8"))
            except (ValueError, UnicodeDecodeError) as e:
                raise DataError(f"request body is not valid JSON: {e}") from e
            if not isinstance(obj, dict):
                raise DataError("request body must be a JSON object")
            return obj

        def do_GET(self):
            try:
                url = urlparse(self.path)
                parts = [p for p in url.path.split("/") if p]
                if parts == ["health"]:
                    return self._send_json(service.health())
                if len(parts) == 2 and parts[0] == "sessions":
                    s = service.get_session(parts[1])
                    with s.lock:
                        return self._send_json(service.session_view(s))
                if len(parts) == 3 and parts[0] == "sessions" and parts[2] == "trajectory":
                    q = parse_qs(url.query)
                    raw = q.get("alphas", [""])[0]
                    if not raw:
                        raise DataError("trajectory needs ?alphas=a,b,c")
                    try:
                        alphas = [float(a) for a in raw.split(",") if a != ""]
                    except ValueError as e:
                        raise DataError(f"bad alphas {raw!r}") from e
                    if not alphas:
                        raise DataError("alphas list is empty")
                    return self._send_json(service.trajectory(parts[1], alphas))
                if len(parts) == 4 and parts[0] == "sessions" and parts[2] == "render":
                    body = service.render(parts[1], parts[3])
                    self.send_response(200)
                    self.send_header("Content-Type", "image/x-portable-graymap")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                    return
                raise NotFoundError(f"no route {url.path}")
            except Exception as e:  # every error becomes a JSON response
                self._send_error(e)

        def do_POST(self):
            try:
                parts = [p for p in urlparse(self.path).path.split("/") if p]
                if parts == ["sessions"]:
                    ctype = (self.headers.get("Content-Type") or "").split(";")[0].strip()
                    if ctype in ("image/x-portable-graymap", "application/octet-stream"):
                        return self._send_json(
                            service.create_session(None, self._read_body()), status=201
                        )
                    body = self._json_body()
                    return self._send_json(
                        service.create_session(body.get("shape_id"), None), status=201
                    )
                if len(parts) == 3 and parts[0] == "sessions" and parts[2] == "condition":
                    return self._send_json(service.set_condition(parts[1], self._json_body()))
                if len(parts) == 3 and parts[0] == "sessions" and parts[2] == "accept":
                    body = self._json_body()
                    if "alpha" not in body:
                        raise DataError("accept needs an alpha")
                    return self._send_json(service.accept(parts[1], body["alpha"]))
                raise NotFoundError(f"no route {self.path}")
            except Exception as e:
                self._send_error(e)

    return Handler


def create_server(config: RunConfig, port: int) -> tuple[ThreadingHTTPServer, ExplorationService]:
    bundle = SpaceBundle.load(config.paths.bundle_dir, require_mapper=True)
    store = DataStore(config.paths.data_dir)
    service = ExplorationService(bundle, store, config)
    try:
        server = ThreadingHTTPServer(("127.0.0.1", port), make_handler(service))
    except OSError as e:
        raise StateError(f"cannot bind port {port}: {e}") from e
    return server, service


def serve_forever(config: RunConfig, port: int) -> int:
    server, _ = create_server(config, port)
    log.info("serving on http://127.0.0.1:%d", port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0
