"""Text report and optional plots from an output directory."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

__all__ = ["make_report"]


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _as_float(v: str) -> float:
    return float(v)


def _plots(root: Path, out: Path) -> list:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return []
    made = []
    for surf in sorted(root.glob("run/seed_*/surface.csv")):
        head, rows = _read_csv(surf)
        d = len(head) - 2
        if d != 2 or not rows:
            continue
        b = np.array([[int(r[0]), int(r[1])] for r in rows])
        Fp = np.array([_as_float(r[2]) for r in rows])
        Fm = np.array([_as_float(r[3]) for r in rows])
        if not (np.isfinite(Fp).all() and np.isfinite(Fm).all()):
            continue
        lo = b.min(axis=0)
        shape = tuple(b.max(axis=0) - lo + 1)
        fig, axes = plt.subplots(1, 2, figsize=(9, 4))
        for ax, F, name in zip(axes, (Fp, Fm), ("F_plus", "F_minus")):
            img = np.zeros(shape)
            img[tuple((b - lo).T)] = F
            im = ax.imshow(img.T, origin="lower", extent=(lo[0] - .5, lo[0] + shape[0] - .5,
                                                          lo[1] - .5, lo[1] + shape[1] - .5))
            ax.set_title(name)
            ax.set_xlabel("b0")
            ax.set_ylabel("b1 (time)")
            fig.colorbar(im, ax=ax)
        p = out / f"surface_{surf.parent.name}.png"
        fig.tight_layout()
        fig.savefig(p, dpi=100)
        plt.close(fig)
        made.append(p)
    tail = root / "tail" / "tail_summary.json"
    if tail.exists():
        s = json.loads(tail.read_text())
        r, sv = np.asarray(s["r"], float), np.asarray(s["survival"], float)
        fig, ax = plt.subplots(figsize=(5, 4))
        ok = sv > 0
        ax.semilogy(r[ok], sv[ok], "o", label="empirical")
        f = s["fit"]
        if isinstance(f["slope"], float):
            r2 = f"{f['r2']:.3f}" if isinstance(f["r2"], float) else str(f["r2"])
            ax.semilogy(r, np.exp(f["intercept"] + f["slope"] * r), "-", label=f"fit, R2={r2}")
        ax.set_xlabel("r")
        ax.set_ylabel("P[rad > r]")
        ax.legend()
        p = out / "tail.png"
        fig.tight_layout()
        fig.savefig(p, dpi=100)
        plt.close(fig)
        made.append(p)
    front = root / "infect" / "infect_front.csv"
    if front.exists():
        _, rows = _read_csv(front)
        fig, ax = plt.subplots(figsize=(5, 4))
        seeds = sorted({int(r[0]) for r in rows})
        for sd in seeds[:20]:
            sel = [r for r in rows if int(r[0]) == sd]
            ax.plot([float(r[1]) for r in sel], [int(r[2]) for r in sel], lw=0.8)
        ax.set_xlabel("t")
        ax.set_ylabel("front (l1)")
        p = out / "infect_front.png"
        fig.tight_layout()
        fig.savefig(p, dpi=100)
        plt.close(fig)
        made.append(p)
    sur = root / "surround" / "surround_summary.json"
    if sur.exists():
        s = json.loads(sur.read_text())
        r = np.asarray(s["radii"], float)
        fr = np.asarray([float(v) for v in s["nonsurround_frequency"]])
        fig, ax = plt.subplots(figsize=(5, 4))
        ok = fr > 0
        ax.semilogy(r[ok], fr[ok], "o-")
        f = s["envelope_fit"]
        if isinstance(f["slope"], float):
            ax.semilogy(r, np.exp(f["intercept"] + f["slope"] * r), "--", label="exponential envelope")
            ax.legend()
        ax.set_xlabel("r")
        ax.set_ylabel("P[not surrounded at r]")
        p = out / "surround.png"
        fig.tight_layout()
        fig.savefig(p, dpi=100)
        plt.close(fig)
        made.append(p)
    return made


def make_report(root, out=None, plots: bool = True) -> dict:
    """Collect every ``*_summary.json`` under ``root`` into ``report.md`` and render plots when possible."""
    root = Path(root)
    out = root if out is None else Path(out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# lipsurf report", ""]
    summaries = sorted(root.rglob("*_summary.json"))
    for p in summaries:
        s = json.loads(p.read_text())
        lines.append(f"## {s.get('experiment', p.stem)} ({p.relative_to(root)})")
        for k in sorted(s):
            v = s[k]
            if isinstance(v, (dict, list)) and len(json.dumps(v)) > 200:
                continue
            lines.append(f"- {k}: {json.dumps(v)}")
        lines.append("")
    made = _plots(root, out) if plots else []
    if plots and not made:
        lines.append("(no plots: matplotlib unavailable or nothing to plot)")
    for m in made:
        lines.append(f"![{m.stem}]({m.name})")
    rp = out / "report.md"
    rp.write_text("\n".join(lines) + "\n")
    return {"report": str(rp), "plots": [str(m) for m in made], "n_summaries": len(summaries)}
