"""HTTP inference service over a frozen model bundle.

One immutable bundle, loaded once; every response is a pure function of
the request and the loaded weights. Admission control is a simple
in-flight counter: past the limit the request is turned away with 429
rather than queued without bound.
"""

from __future__ import annotations

import base64
import binascii
import json
import threading

import numpy as np
from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse, Response

from quantart.data import decode_image_bytes, image_bytes, to_uint8, \
    to_unit_range
from quantart.fusion import FusionParams, stylize
from quantart.tensor import Tensor

MAX_BODY_BYTES = 32 * 1024 * 1024
DEFAULT_MAX_CONCURRENCY = 4
MAX_IMAGE_SIDE = 4096


class RequestError(ValueError):
    """Client-side problem; maps to an HTTP 400 with a stable code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def _resize(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of one (3, H, W) [-1, 1] array."""
    from PIL import Image

    if arr.shape[1:] == (height, width):
        return arr
    im = Image.fromarray(to_uint8(arr).transpose(1, 2, 0))
    im = im.resize((width, height), Image.BILINEAR)
    return to_unit_range(np.asarray(im, dtype=np.uint8)).transpose(2, 0, 1)


def _fit(n: int, multiple: int) -> int:
    return max(multiple, (n // multiple) * multiple)


def stylize_image_bytes(bundle, content_raw: bytes, style_raw: bytes,
                        alpha: float, beta: float,
                        fuse_outputs: bool = False) -> bytes:
    """PNG/JPEG bytes in, stylized PNG bytes out.

    Both images are snapped down to the nearest encoder-compatible size
    (a multiple of the downsampling factor); the output is resized back
    to the content image's original dimensions.
    """
    params = FusionParams(alpha, beta)
    content = decode_image_bytes(content_raw, max_side=MAX_IMAGE_SIDE)
    style = decode_image_bytes(style_raw, max_side=MAX_IMAGE_SIDE)
    multiple = 2 ** bundle.cfg.levels
    _, orig_h, orig_w = content.shape
    content = _resize(content, _fit(orig_h, multiple), _fit(orig_w, multiple))
    style = _resize(style, _fit(style.shape[1], multiple),
                    _fit(style.shape[2], multiple))
    out = stylize(bundle, Tensor(content[None]), Tensor(style[None]),
                  params, fuse_outputs=fuse_outputs)
    result = _resize(out.data[0].astype(np.float32), orig_h, orig_w)
    return image_bytes(result)


def _parse_stylize_payload(raw: bytes) -> tuple[bytes, bytes, float, float]:
    try:
        payload = json.loads(raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise RequestError("invalid_json", f"request body is not JSON: {e}")
    if not isinstance(payload, dict):
        raise RequestError("invalid_json", "request body must be an object")
    images = []
    for field in ("content_b64", "style_b64"):
        value = payload.get(field)
        if not isinstance(value, str):
            raise RequestError(
                "missing_field", f"{field} must be a base64 string")
        try:
            images.append(base64.b64decode(value, validate=True))
        except (binascii.Error, ValueError) as e:
            raise RequestError("bad_base64", f"{field}: {e}")
    knobs = []
    for field in ("alpha", "beta"):
        value = payload.get(field, 1.0)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise RequestError(
                "param_out_of_range", f"{field} must be a number in [0, 1]")
        if not 0.0 <= float(value) <= 1.0:
            raise RequestError(
                "param_out_of_range",
                f"{field}={value} outside [0, 1]")
        knobs.append(float(value))
    return images[0], images[1], knobs[0], knobs[1]


def create_app(checkpoint_path=None, bundle=None,
               max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
               load_in_background: bool = True):
    """Build the FastAPI app.

    Pass ``bundle`` for an already-loaded model, or ``checkpoint_path``
    to load one (in a daemon thread by default, so the server can come
    up and answer 503 while the weights stream in). With neither, the
    app stays in the loading state until ``app.state.install_bundle``
    is called.
    """
    if max_concurrency < 1:
        raise ValueError(f"max_concurrency must be >= 1, got "
                         f"{max_concurrency}")

    app = FastAPI(title="quantart", docs_url=None, redoc_url=None)
    state = app.state
    state.bundle = None
    state.model_hash = None
    state.load_error = None
    state.max_concurrency = max_concurrency
    state.in_flight = 0

    def install_bundle(b):
        for comp in b.components().values():
            comp.freeze()
        state.model_hash = b.model_hash()
        state.bundle = b

    state.install_bundle = install_bundle

    def load_from_path():
        from quantart.training import ModelBundle

        try:
            install_bundle(ModelBundle.load(checkpoint_path))
        except Exception as e:  # surfaced via /health, not a crash
            state.load_error = f"{type(e).__name__}: {e}"

    if bundle is not None:
        install_bundle(bundle)
    elif checkpoint_path is not None:
        if load_in_background:
            threading.Thread(target=load_from_path, daemon=True).start()
        else:
            load_from_path()

    def error_response(status: int, code: str, message: str):
        return JSONResponse(status_code=status,
                            content={"code": code, "message": message})

    def not_ready_response():
        message = state.load_error or "model is still loading"
        return error_response(503, "model_not_ready", message)

    @app.get("/api/v1/health")
    async def health():
        if state.bundle is not None:
            status = "ready"
        elif state.load_error is not None:
            status = "error"
        else:
            status = "loading"
        return {"status": status, "model_hash": state.model_hash}

    @app.get("/api/v1/config")
    async def config():
        if state.bundle is None:
            return not_ready_response()
        cfg = state.bundle.cfg
        return {
            "model_hash": state.model_hash,
            "stage": state.bundle.stage,
            "alpha_range": [0.0, 1.0],
            "beta_range": [0.0, 1.0],
            "max_image_side": MAX_IMAGE_SIDE,
            "image_multiple": 2 ** cfg.levels,
            "max_body_bytes": MAX_BODY_BYTES,
            "train": cfg.to_dict(),
        }

    @app.post("/api/v1/stylize")
    async def stylize_endpoint(request: Request):
        declared = request.headers.get("content-length")
        if declared is not None and declared.isdigit() \
                and int(declared) > MAX_BODY_BYTES:
            return error_response(413, "request_too_large",
                                  f"request exceeds {MAX_BODY_BYTES} bytes")
        raw = await request.body()
        if len(raw) > MAX_BODY_BYTES:
            return error_response(413, "request_too_large",
                                  f"request exceeds {MAX_BODY_BYTES} bytes")
        if state.bundle is None:
            return not_ready_response()
        try:
            content_raw, style_raw, alpha, beta = _parse_stylize_payload(raw)
        except RequestError as e:
            return error_response(400, e.code, e.message)
        # handlers all run on the event loop thread, so the counter
        # needs no lock; only the model call moves to the pool
        if state.in_flight >= state.max_concurrency:
            return error_response(
                429, "too_many_requests",
                f"at the {state.max_concurrency}-request limit; retry")
        state.in_flight += 1
        try:
            png = await run_in_threadpool(
                stylize_image_bytes, state.bundle, content_raw, style_raw,
                alpha, beta)
        except RequestError as e:
            return error_response(400, e.code, e.message)
        except (IOError, ValueError) as e:
            return error_response(400, "bad_image", str(e))
        finally:
            state.in_flight -= 1
        return Response(content=png, media_type="image/png")

    return app
