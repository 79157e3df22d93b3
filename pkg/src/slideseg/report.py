"""Loss-curve SVG rendering from a losses.csv log.

Pure text-in, text-out so identical logs give byte-identical plots.
Each series draws a polyline plus one circle per data point.
"""

TERMS = ("ce", "ssim", "iou", "total")

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 24, 36, 56

PALETTE = {
    ("train", "ce"): "#1f77b4",
    ("val", "ce"): "#7cb4d8",
    ("train", "ssim"): "#d62728",
    ("val", "ssim"): "#e8908f",
    ("train", "iou"): "#2ca02c",
    ("val", "iou"): "#8fd08f",
    ("train", "total"): "#333333",
    ("val", "total"): "#999999",
}


class CurvesError(ValueError):
    pass


def read_losses_csv(text):
    """Parse a losses log into {(split, term): [(epoch, value), ...]}."""
    lines = [ln for ln in text.strip().split("\n") if ln.strip()]
    if not lines:
        raise CurvesError("curves file is empty")
    header = lines[0].split(",")
    expected = ["epoch", "split", "ce", "ssim", "iou", "total", "seconds"]
    if header != expected:
        raise CurvesError(f"unexpected header {lines[0]!r}")
    series = {}
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(expected):
            raise CurvesError(f"line {lineno}: expected {len(expected)} cells")
        try:
            epoch = int(cells[0])
            values = [float(c) for c in cells[2:6]]
        except ValueError as exc:
            raise CurvesError(f"line {lineno}: {exc}") from exc
        split = cells[1]
        if split not in ("train", "val"):
            raise CurvesError(f"line {lineno}: unknown split {split!r}")
        for term, value in zip(TERMS, values):
            series.setdefault((split, term), []).append((epoch, value))
    return series


def _fmt(x):
    return f"{x:.2f}".rstrip("0").rstrip(".") or "0"


def _scales(points):
    xs = [x for pts in points for x, _ in pts]
    ys = [y for pts in points for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    y_lo = min(y_lo, 0.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1

    def sx(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (WIDTH - MARGIN_L - MARGIN_R)

    def sy(y):
        return HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B)

    return sx, sy, (x_lo, x_hi), (y_lo, y_hi)


def render_curves(series, title):
    """Draw the given {(split, term): points} map as one SVG chart."""
    keys = sorted(series, key=lambda k: (TERMS.index(k[1]), k[0]))
    if not keys:
        raise CurvesError("no series to plot")
    sx, sy, (x_lo, x_hi), (y_lo, y_hi) = _scales([series[k] for k in keys])

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]

    ax_y = HEIGHT - MARGIN_B
    parts.append(
        f'<line x1="{MARGIN_L}" y1="{ax_y}" x2="{WIDTH - MARGIN_R}" y2="{ax_y}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{ax_y}" stroke="black"/>'
    )
    parts.append(
        f'<text x="{(MARGIN_L + WIDTH - MARGIN_R) / 2:.1f}" y="{HEIGHT - 12}" '
        f'text-anchor="middle">epoch</text>'
    )
    parts.append(
        f'<text x="16" y="{(MARGIN_T + ax_y) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(MARGIN_T + ax_y) / 2:.1f})">loss value</text>'
    )

    for i in range(5):
        fx = x_lo + (x_hi - x_lo) * i / 4
        fy = y_lo + (y_hi - y_lo) * i / 4
        px, py = sx(fx), sy(fy)
        parts.append(f'<line x1="{px:.1f}" y1="{ax_y}" x2="{px:.1f}" y2="{ax_y + 4}" stroke="black"/>')
        parts.append(
            f'<text x="{px:.1f}" y="{ax_y + 18}" text-anchor="middle">{_fmt(fx)}</text>'
        )
        parts.append(
            f'<line x1="{MARGIN_L - 4}" y1="{py:.1f}" x2="{MARGIN_L}" y2="{py:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{MARGIN_L - 8}" y="{py + 4:.1f}" text-anchor="end">{_fmt(fy)}</text>'
        )

    legend_y = MARGIN_T
    for split, term in keys:
        color = PALETTE[(split, term)]
        pts = series[(split, term)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        dash = ' stroke-dasharray="5,3"' if split == "val" else ""
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>'
        )
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>')
        lx = WIDTH - MARGIN_R - 130
        parts.append(
            f'<line x1="{lx}" y1="{legend_y}" x2="{lx + 18}" y2="{legend_y}" '
            f'stroke="{color}" stroke-width="1.5"{dash}/>'
        )
        parts.append(f'<text x="{lx + 24}" y="{legend_y + 4}">{split} {term}</text>')
        legend_y += 16

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(csv_text, out_dir):
    """Render one SVG per loss term plus an overlay; returns written paths."""
    import os

    series = read_losses_csv(csv_text)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for term in TERMS:
        sub = {k: v for k, v in series.items() if k[1] == term}
        if not sub:
            continue
        path = os.path.join(out_dir, f"{term}.svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(render_curves(sub, f"{term} loss"))
        written.append(path)
    path = os.path.join(out_dir, "overlay.svg")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_curves(series, "all loss terms"))
    written.append(path)
    return written
