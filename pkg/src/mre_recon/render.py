"""Raster output: flat-shaded element fields and simple line charts.

Field images map ``[vmin, vmax]`` linearly onto gray levels 0..255 and are
drawn with +y pointing up. The PGM is written by hand so that its bytes are
stable; the range and unit go into a header comment. PNG copies carry a
legend strip with the same annotations.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .mesh import TriMesh

CANVAS = 512
UNIT_LABEL = "100 kPa"


def rasterize(mesh: TriMesh, values, size: int = CANVAS) -> np.ndarray:
    """Per-element values sampled at pixel centers; NaN outside the mesh."""
    values = np.asarray(values, dtype=float)
    lo = mesh.nodes.min(axis=0)
    span = mesh.nodes.max(axis=0) - lo
    px = (np.arange(size) + 0.5) / size
    X = lo[0] + px * span[0]
    Y = lo[1] + px[::-1] * span[1]
    img = np.full((size, size), np.nan)
    tri = mesh.nodes[mesh.elements]
    for e, (a, b, c) in enumerate(tri):
        xmin, ymin = np.minimum(np.minimum(a, b), c)
        xmax, ymax = np.maximum(np.maximum(a, b), c)
        cols = np.nonzero((X >= xmin - 1e-12) & (X <= xmax + 1e-12))[0]
        rows = np.nonzero((Y >= ymin - 1e-12) & (Y <= ymax + 1e-12))[0]
        if not cols.size or not rows.size:
            continue
        gx, gy = np.meshgrid(X[cols], Y[rows])
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        l1 = ((b[0] - gx) * (c[1] - gy) - (c[0] - gx) * (b[1] - gy)) / det
        l2 = ((c[0] - gx) * (a[1] - gy) - (a[0] - gx) * (c[1] - gy)) / det
        l3 = 1 - l1 - l2
        inside = (l1 >= -1e-12) & (l2 >= -1e-12) & (l3 >= -1e-12)
        sub = img[np.ix_(rows, cols)]
        sub[inside] = values[e]
        img[np.ix_(rows, cols)] = sub
    return img


def to_gray(img, vmin=None, vmax=None):
    finite = img[np.isfinite(img)]
    vmin = float(finite.min()) if vmin is None else float(vmin)
    vmax = float(finite.max()) if vmax is None else float(vmax)
    if vmax > vmin:
        g = (img - vmin) / (vmax - vmin)
    else:
        g = np.zeros_like(img)
    g = np.clip(np.nan_to_num(g, nan=0.0), 0.0, 1.0)
    return np.round(g * 255).astype(np.uint8), vmin, vmax


def write_pgm(path, gray: np.ndarray, comment: str = ""):
    h, w = gray.shape
    header = "P5\n"
    for line in comment.splitlines():
        header += f"# {line}\n"
    header += f"{w} {h}\n255\n"
    Path(path).write_bytes(header.encode("ascii") + np.ascontiguousarray(gray, np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end]
        pos = end + 1
        if line.startswith(b"#"):
            continue
        fields.extend(line.split())
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def render_field(mesh: TriMesh, values, stem, title: str = "E", vmin=None, vmax=None):
    """Write ``stem.pgm`` and ``stem.png`` for a per-element field."""
    img = rasterize(mesh, values)
    gray, vmin, vmax = to_gray(img, vmin, vmax)
    note = f"{title} min={vmin:.6g} max={vmax:.6g} unit={UNIT_LABEL} colormap=linear-gray"
    stem = Path(stem)
    write_pgm(stem.with_suffix(".pgm"), gray, note)

    band = 48
    canvas = Image.new("L", (CANVAS, CANVAS + band), color=255)
    canvas.paste(Image.fromarray(gray, mode="L"), (0, 0))
    ramp = np.tile(np.linspace(0, 255, CANVAS - 40).astype(np.uint8), (10, 1))
    canvas.paste(Image.fromarray(ramp, mode="L"), (20, CANVAS + 6))
    draw = ImageDraw.Draw(canvas)
    draw.text((20, CANVAS + 20), f"{vmin:.4g}", fill=0)
    draw.text((CANVAS - 80, CANVAS + 20), f"{vmax:.4g}", fill=0)
    draw.text((CANVAS // 2 - 60, CANVAS + 32), f"{title} [{UNIT_LABEL}]", fill=0)
    canvas.save(stem.with_suffix(".png"))
    return vmin, vmax


_COLORS = [(31, 119, 180), (214, 39, 40), (44, 160, 44), (148, 103, 189), (255, 127, 14)]


def line_chart(path, x, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
               size=(640, 480)):
    """Minimal line chart: one polyline per ``series`` entry, legend in the corner."""
    W, H = size
    left, right, top, bottom = 70, 20, 30, 50
    img = Image.new("RGB", size, "white")
    draw = ImageDraw.Draw(img)
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(v, dtype=float) for v in series.values()]
    allv = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.array([0.0, 1.0])
    if allv.size == 0:
        allv = np.array([0.0, 1.0])
    y0, y1 = float(allv.min()), float(allv.max())
    if y1 <= y0:
        y1 = y0 + 1.0
    x0, x1 = float(x.min()), float(x.max())
    if x1 <= x0:
        x1 = x0 + 1.0

    def to_px(xv, yv):
        return (left + (xv - x0) / (x1 - x0) * (W - left - right),
                H - bottom - (yv - y0) / (y1 - y0) * (H - top - bottom))

    draw.rectangle([left, top, W - right, H - bottom], outline="black")
    for xv in x:
        px, _ = to_px(xv, y0)
        draw.line([px, H - bottom, px, H - bottom + 4], fill="black")
        draw.text((px - 12, H - bottom + 6), f"{xv:g}", fill="black")
    for frac in (0.0, 0.5, 1.0):
        yv = y0 + frac * (y1 - y0)
        _, py = to_px(x0, yv)
        draw.text((4, py - 6), f"{yv:.3g}", fill="black")
    draw.text((W // 2 - 40, H - 18), xlabel, fill="black")
    draw.text((4, 8), f"{title}  ({ylabel})", fill="black")
    for k, (name, y) in enumerate(zip(series.keys(), ys)):
        col = _COLORS[k % len(_COLORS)]
        pts = [to_px(a, b) for a, b in zip(x, y) if np.isfinite(b)]
        if len(pts) > 1:
            draw.line(pts, fill=col, width=2)
        for px, py in pts:
            draw.ellipse([px - 3, py - 3, px + 3, py + 3], outline=col)
        draw.text((W - right - 140, top + 8 + 14 * k), name, fill=col)
    img.save(path)
