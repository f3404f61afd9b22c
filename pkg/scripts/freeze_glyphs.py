"""Regenerate src/mad_compress/_glyphs.py from Pillow's built-in bitmap font.

Run once; the output is committed so rendering never touches platform fonts.
"""
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

CELL_W, CELL_H = 6, 12

font = ImageFont.load_default_imagefont()
rows = {}
for code in range(32, 127):
    im = Image.new("L", (CELL_W, CELL_H), 0)
    ImageDraw.Draw(im).text((0, 0), chr(code), font=font, fill=255)
    bits = np.array(im) > 127
    rows[code] = [int("".join("1" if b else "0" for b in r), 2) for r in bits]

out = ['"""Embedded 6x12 bitmap glyphs for printable ASCII (generated by scripts/freeze_glyphs.py)."""', "",
       f"CELL_W = {CELL_W}", f"CELL_H = {CELL_H}", "",
       "# code point -> 12 row bitmasks, MSB is the leftmost pixel", "GLYPHS = {"]
for code, r in rows.items():
    out.append(f"    {code}: ({', '.join(f'0x{v:02x}' for v in r)}),  # {chr(code)!r}")
out.append("}")
Path(__file__).resolve().parents[1].joinpath("src/mad_compress/_glyphs.py").write_text("\n".join(out) + "\n")
