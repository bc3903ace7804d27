"""Minimal raster image model: binary PPM codec, bbox parsing, crop, flip.

Images are immutable RGB8 buffers. Binary PPM (P6, maxval 255) is the one
normative byte format; decode and encode are exact inverses on canonical
files, which keeps golden tests codec-free.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .errors import (
    BadHeaderError,
    BadMagicError,
    DegenerateBoxError,
    NoBoxError,
    TruncatedPixelsError,
)

__all__ = ["Image", "BBox", "decode_ppm", "encode_ppm", "parse_bbox_json",
           "crop", "flip_horizontal"]


@dataclass(frozen=True)
class Image:
    """Row-major RGB8 raster; ``pixels`` holds exactly width*height*3 bytes."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise BadHeaderError(f"non-positive dimensions {self.width}x{self.height}")
        if len(self.pixels) != self.width * self.height * 3:
            raise TruncatedPixelsError(
                f"expected {self.width * self.height * 3} pixel bytes, got {len(self.pixels)}"
            )


@dataclass(frozen=True)
class BBox:
    """Pixel rectangle, inclusive-exclusive: [x1, x2) x [y1, y2)."""

    x1: int
    y1: int
    x2: int
    y2: int


_WHITESPACE = b" \t\r\n"


def _read_header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # PPM allows '#' comments anywhere whitespace may appear.
    while pos < len(data):
        if data[pos : pos + 1] in (b"#",):
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        elif data[pos : pos + 1] in (b" ", b"\t", b"\r", b"\n"):
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos : pos + 1] not in (b" ", b"\t", b"\r", b"\n", b"#"):
        pos += 1
    if start == pos:
        raise BadHeaderError("truncated header")
    return data[start:pos], pos


def decode_ppm(data: bytes) -> Image:
    """Decode a binary PPM (magic P6, maxval 255) into an Image.

    Raises BadMagicError, BadHeaderError, or TruncatedPixelsError on
    malformed input. Trailing bytes after the pixel payload are ignored.
    """
    if not data.startswith(b"P6"):
        raise BadMagicError("not a P6 PPM file")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_header_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise BadHeaderError(f"non-numeric header field {token!r}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise BadHeaderError(f"non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise BadHeaderError(f"unsupported maxval {maxval}")
    # Exactly one whitespace byte separates the header from the pixels.
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
        raise BadHeaderError("missing separator before pixel data")
    pos += 1
    n = width * height * 3
    pixels = data[pos : pos + n]
    if len(pixels) < n:
        raise TruncatedPixelsError(f"expected {n} pixel bytes, got {len(pixels)}")
    return Image(width=width, height=height, pixels=pixels)


def encode_ppm(image: Image) -> bytes:
    """Encode an Image as canonical binary PPM: ``P6\\n<w> <h>\\n255\\n`` + pixels."""
    return b"P6\n%d %d\n255\n" % (image.width, image.height) + image.pixels


_FENCE_RE = re.compile(r"^```[A-Za-z]*\n?|```$", re.MULTILINE)


def _box_from_payload(payload: object) -> list[float] | None:
    if isinstance(payload, dict):
        box = payload.get("bbox_2d")
        if isinstance(box, list) and len(box) == 4 and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in box
        ):
            return [float(v) for v in box]
        return None
    if isinstance(payload, list):
        if len(payload) == 4 and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in payload
        ):
            return [float(v) for v in payload]
        for item in payload:
            box = _box_from_payload(item)
            if box is not None:
                return box
    return None


def parse_bbox_json(text: str, width: int, height: int) -> BBox:
    """Extract a bounding box from model output and clamp it to the image.

    Accepts ``{"bbox_2d": [x1, y1, x2, y2]}``, an array of such objects
    (first one wins), or a bare 4-number array; markdown code fences are
    tolerated. Fractional coordinates are rounded to the nearest pixel.
    Raises NoBoxError if nothing parses, DegenerateBoxError if the clamped
    box has zero area.
    """
    stripped = _FENCE_RE.sub("", text).strip()
    try:
        payload = json.loads(stripped)
    except (json.JSONDecodeError, ValueError):
        raise NoBoxError(f"no JSON box in {text[:80]!r}") from None
    box = _box_from_payload(payload)
    if box is None:
        raise NoBoxError(f"no 4-number box in {text[:80]!r}")
    x1, y1, x2, y2 = (int(round(v)) for v in box)
    x1 = min(max(x1, 0), width)
    x2 = min(max(x2, 0), width)
    y1 = min(max(y1, 0), height)
    y2 = min(max(y2, 0), height)
    if x1 >= x2 or y1 >= y2:
        raise DegenerateBoxError(f"zero-area box after clamping: ({x1},{y1},{x2},{y2})")
    return BBox(x1=x1, y1=y1, x2=x2, y2=y2)


def crop(image: Image, box: BBox) -> Image:
    """Copy the [x1,x2) x [y1,y2) region; output pixel (u,v) = input (x1+u, y1+v)."""
    out_w = box.x2 - box.x1
    rows = []
    for v in range(box.y1, box.y2):
        start = (v * image.width + box.x1) * 3
        rows.append(image.pixels[start : start + out_w * 3])
    return Image(width=out_w, height=box.y2 - box.y1, pixels=b"".join(rows))


def flip_horizontal(image: Image) -> Image:
    """Mirror left-right; output pixel (u,v) = input (width-1-u, v)."""
    w = image.width
    out = bytearray(len(image.pixels))
    for v in range(image.height):
        row = image.pixels[v * w * 3 : (v + 1) * w * 3]
        for u in range(w):
            s = (w - 1 - u) * 3
            out[(v * w + u) * 3 : (v * w + u) * 3 + 3] = row[s : s + 3]
    return Image(width=w, height=image.height, pixels=bytes(out))
