"""Deterministic rasterisation of debate histories onto fixed-size pages.

Glyphs come from an embedded 6x12 bitmap font, so identical input yields
byte-identical pixels everywhere. Layout is line-based: every header, body
line and round divider occupies one line slot, and pages are consecutive runs
of ``lines_per_page`` slots.
"""
from __future__ import annotations

import base64
import hashlib
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Sequence

import numpy as np

from ._glyphs import CELL_H, CELL_W, GLYPHS
from .debate import DebateState

log = logging.getLogger(__name__)

RGB = tuple[int, int, int]

# Okabe-Ito colour-blind safe palette, indexed by agent.
AGENT_PALETTE: tuple[RGB, ...] = (
    (0, 114, 178),
    (213, 94, 0),
    (0, 158, 115),
    (204, 121, 167),
    (230, 159, 0),
    (86, 180, 233),
    (240, 228, 66),
    (0, 0, 0),
)

BASE_FONT_PX = CELL_H


class RenderOverflowError(RuntimeError):
    def __init__(self, required_pages: int, max_pages: int):
        super().__init__(f"history needs {required_pages} pages, limit is {max_pages}")
        self.required_pages = required_pages
        self.max_pages = max_pages


@dataclass(frozen=True)
class RenderLayout:
    canvas: int = 1024
    font_size: int = 12
    line_spacing: float = 1.2
    agent_colors: tuple[RGB, ...] = AGENT_PALETTE
    margin: int = 16
    text_color: RGB = (0, 0, 0)
    background: RGB = (255, 255, 255)
    divider_color: RGB = (128, 128, 128)
    divider_thickness: int = 2
    max_pages: int = 8

    def __post_init__(self) -> None:
        if self.canvas <= 0 or self.canvas % 64:
            raise ValueError(f"canvas must be a positive multiple of 64, got {self.canvas}")
        if self.font_size < BASE_FONT_PX or self.font_size % BASE_FONT_PX:
            raise ValueError(f"font_size must be a multiple of {BASE_FONT_PX} px")
        if self.line_spacing < 1.0:
            raise ValueError("line_spacing must be >= 1.0")
        if len(set(self.agent_colors)) != len(self.agent_colors):
            raise ValueError("agent colours must be pairwise distinct")
        if self.margin < 0 or 2 * self.margin + self.line_pitch > self.canvas:
            raise ValueError("margin leaves no room for text")
        if self.max_pages < 1:
            raise ValueError("max_pages must be >= 1")

    @property
    def scale(self) -> int:
        return self.font_size // BASE_FONT_PX

    @property
    def cell_w(self) -> int:
        return CELL_W * self.scale

    @property
    def cell_h(self) -> int:
        return CELL_H * self.scale

    @property
    def line_pitch(self) -> int:
        return max(self.font_size, int(round(self.font_size * self.line_spacing)))

    @property
    def text_width(self) -> int:
        return self.canvas - 2 * self.margin

    @property
    def glyphs_per_line(self) -> int:
        return self.text_width // self.cell_w

    @property
    def lines_per_page(self) -> int:
        return (self.canvas - 2 * self.margin) // self.line_pitch


@dataclass(frozen=True, eq=False)
class RenderedImage:
    pixels: np.ndarray
    resolution: int
    page_index: int
    digest: str = field(default="")

    def __post_init__(self) -> None:
        if self.pixels.shape != (self.resolution, self.resolution, 3) or self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be a square uint8 RGB raster")
        self.pixels.setflags(write=False)
        if not self.digest:
            object.__setattr__(self, "digest", image_digest(self.pixels))

    @cached_property
    def _png(self) -> bytes:
        return encode_png(self.pixels)

    def to_png(self) -> bytes:
        return self._png

    def data_uri(self) -> str:
        return "data:image/png;base64," + base64.b64encode(self.to_png()).decode("ascii")


def image_digest(image: "RenderedImage | np.ndarray") -> str:
    """SHA-256 over a size header plus the raw row-major RGB bytes."""
    pixels = image.pixels if isinstance(image, RenderedImage) else image
    h, w = pixels.shape[:2]
    hasher = hashlib.sha256(b"MADC-RGB8")
    hasher.update(struct.pack(">II", w, h))
    hasher.update(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())
    return hasher.hexdigest()


def encode_png(pixels: np.ndarray) -> bytes:
    """Minimal truecolour PNG: filter 0 on every row, zlib level 9, no ancillary chunks."""
    h, w = pixels.shape[:2]
    raw = np.zeros((h, 1 + 3 * w), dtype=np.uint8)
    raw[:, 1:] = pixels.reshape(h, 3 * w)

    def chunk(kind: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw.tobytes(), 9))
        + chunk(b"IEND", b"")
    )


# -- text layout ----------------------------------------------------------

def wrap_text(text: str, box_width: int, layout: RenderLayout) -> list[str]:
    """Greedy word wrap measured in glyph advances; over-long words are hard-split."""
    width = box_width // layout.cell_w
    if width < 1:
        raise ValueError(f"box of {box_width}px is narrower than one glyph")
    lines: list[str] = []
    for para in text.replace("\r", "").replace("\t", " ").split("\n"):
        current = ""
        for word in para.split():
            while len(word) > width:
                if current:
                    lines.append(current)
                    current = ""
                lines.append(word[:width])
                word = word[width:]
            if not word:
                continue
            if not current:
                current = word
            elif len(current) + 1 + len(word) <= width:
                current += " " + word
            else:
                lines.append(current)
                current = word
        if current:
            lines.append(current)
    return lines


@dataclass(frozen=True)
class PlacedLine:
    kind: Literal["header", "body", "divider"]
    page: int
    slot: int
    x: int
    y: int
    width: int
    height: int
    round: int
    agent: int = 0
    text: str = ""


def layout_history(history: DebateState, layout: RenderLayout) -> tuple[list[PlacedLine], int]:
    """Place every line of the history; returns the lines and the page count."""
    items: list[tuple[str, int, int, str]] = []
    for block_no, (rnd, responses) in enumerate(history.rounds()):
        if block_no:
            items.append(("divider", rnd, 0, ""))
        for resp in responses:
            items.append(("header", rnd, resp.agent_index, f"Agent {resp.agent_index}:"))
            for line in wrap_text(resp.text, layout.text_width, layout):
                items.append(("body", rnd, resp.agent_index, line))

    lpp = layout.lines_per_page
    pages = max(1, math.ceil(len(items) / lpp))
    pad = (layout.line_pitch - layout.cell_h) // 2
    placed = []
    for idx, (kind, rnd, agent, text) in enumerate(items):
        page, slot = divmod(idx, lpp)
        top = layout.margin + slot * layout.line_pitch
        if kind == "divider":
            y = top + (layout.line_pitch - layout.divider_thickness) // 2
            placed.append(PlacedLine("divider", page, slot, layout.margin, y, layout.text_width,
                                     layout.divider_thickness, rnd))
        else:
            placed.append(PlacedLine(kind, page, slot, layout.margin, top + pad, len(text) * layout.cell_w,
                                     layout.cell_h, rnd, agent, text))
    return placed, pages


def _glyph_bank(scale: int) -> tuple[np.ndarray, int]:
    """Array of glyph masks indexed by ``code - 32``; the last entry is the replacement box."""
    bank = np.zeros((96, CELL_H, CELL_W), dtype=bool)
    for code, rows in GLYPHS.items():
        for r, bits in enumerate(rows):
            for c in range(CELL_W):
                bank[code - 32, r, c] = bool(bits >> (CELL_W - 1 - c) & 1)
    box = bank[95]
    box[2:10, 0] = box[2:10, 4] = True
    box[2, 0:5] = box[9, 0:5] = True
    if scale > 1:
        bank = bank.repeat(scale, axis=1).repeat(scale, axis=2)
    return bank, 95


_BANKS: dict[int, tuple[np.ndarray, int]] = {}


def _line_mask(text: str, scale: int) -> tuple[np.ndarray, int]:
    if scale not in _BANKS:
        _BANKS[scale] = _glyph_bank(scale)
    bank, replacement = _BANKS[scale]
    codes = np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32).astype(np.int64) - 32
    unknown = (codes < 0) | (codes > 94)
    codes[unknown] = replacement
    glyphs = bank[codes]  # (n, h, w)
    n, h, w = glyphs.shape
    return glyphs.transpose(1, 0, 2).reshape(h, n * w), int(unknown.sum())


def render_history(history: DebateState, layout: RenderLayout | None = None) -> list[RenderedImage]:
    """Render H_r to one or more square pages, in reading order."""
    layout = layout or RenderLayout()
    if len(history.rounds()) and max(r.agent_index for r in history.history) > len(layout.agent_colors):
        raise ValueError(f"layout has colours for only {len(layout.agent_colors)} agents")
    placed, n_pages = layout_history(history, layout)
    if n_pages > layout.max_pages:
        raise RenderOverflowError(n_pages, layout.max_pages)

    canvases = [np.empty((layout.canvas, layout.canvas, 3), dtype=np.uint8) for _ in range(n_pages)]
    for c in canvases:
        c[:] = layout.background
    replaced = 0
    for line in placed:
        page = canvases[line.page]
        if line.kind == "divider":
            page[line.y : line.y + line.height, line.x : line.x + line.width] = layout.divider_color
            continue
        if not line.text:
            continue
        mask, unknown = _line_mask(line.text, layout.scale)
        replaced += unknown
        color = layout.agent_colors[line.agent - 1] if line.kind == "header" else layout.text_color
        region = page[line.y : line.y + mask.shape[0], line.x : line.x + mask.shape[1]]
        region[mask] = color
    if replaced:
        log.warning("rendered %d glyphs outside the embedded font as replacement boxes", replaced)
    return [RenderedImage(c, layout.canvas, i) for i, c in enumerate(canvases)]


def render_pages_for(history: DebateState, layout: RenderLayout | None = None) -> list[RenderedImage]:
    """Pages an agent would receive: nothing at all for an empty history."""
    if history.is_empty:
        return []
    return render_history(history, layout)


def page_filename(query_id: str, round_: int, page: int) -> str:
    return f"{query_id}_r{round_}_p{page}.png"


def digest_manifest(pages: Sequence[tuple[str, RenderedImage]]) -> str:
    """``name<TAB>digest`` lines, one per page, in the given order."""
    return "".join(f"{name}\t{img.digest}\n" for name, img in pages)
