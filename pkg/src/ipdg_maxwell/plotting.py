"""Optional figures rendered next to the CSV reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _style(ax, xlabel, ylabel):
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)


def _by_k(rows):
    out = {}
    for r in rows:
        out.setdefault(r["k"], []).append(r)
    return out


def plot_report(report, path) -> Path | None:
    """Render a figure for ``report`` at ``path`` (PNG); returns None when nothing to draw."""
    cmd = report.metadata.get("command")
    rows = report.rows
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=(6, 4.2))
    if cmd == "stability":
        ks = [r["k"] for r in rows]
        ax.plot(ks, [r["stability_ratio"] for r in rows], "o-", ms=3)
        ax.axhline(1.0, color="k", lw=0.8, ls=":")
        _style(ax, "k", r"$\|E_h\|_{H(curl)} / \|E\|_{H(curl)}$")
        ax.set_title(f"h = {report.metadata.get('h', rows[0]['h']):.4g}")
    elif cmd in ("convergence", "solve"):
        for k, sub in _by_k(rows).items():
            ax.loglog([r["h"] for r in sub], [r["rel_hcurl"] for r in sub], "o-", label=f"k={k:g}")
        hs = np.array(sorted({r["h"] for r in rows}))
        if len(hs) > 1:
            ref = rows[-1]["rel_hcurl"] * hs / hs[0]
            ax.loglog(hs, ref, "k--", lw=0.8, label="slope 1")
        ax.legend()
        _style(ax, "h", "relative H(curl) error")
    elif cmd == "projection":
        for k, sub in _by_k(rows).items():
            hs = [r["h"] for r in sub]
            ax.loglog(hs, [r["err_l2"] for r in sub], "o-", label=f"L2, k={k:g}")
            ax.loglog(hs, [r["err_energy"] for r in sub], "s-", label=f"energy, k={k:g}")
            ax.loglog(hs, [r["err_boundary"] for r in sub], "^-", label=f"boundary, k={k:g}")
        ax.legend()
        _style(ax, "h", "projection error")
    elif cmd == "critical-h":
        good = [r for r in rows if r.get("h_crit") is not None and np.isfinite(r["h_crit"])]
        if good:
            ks = np.array([r["k"] for r in good])
            hc = np.array([r["h_crit"] for r in good])
            ax.loglog(ks, hc, "o-", label=f"h(k, {report.metadata.get('eps', '')})")
            ax.loglog(ks, hc[0] * (ks / ks[0]) ** -1.5, "k:", label="slope -1.5")
            ax.legend()
        _style(ax, "k", "critical mesh size")
    elif cmd == "penalty-scan":
        pts = [r for r in rows if np.isfinite(r["rel_hcurl"])]
        z = np.array([complex(r["igamma1"]) for r in pts])
        sc = ax.scatter(z.real, z.imag, c=[r["rel_hcurl"] for r in pts], cmap="viridis")
        fig.colorbar(sc, ax=ax, label="relative H(curl) error")
        _style(ax, r"Re $i\gamma_1$", r"Im $i\gamma_1$")
    elif cmd == "coercivity":
        for k, sub in _by_k(rows).items():
            ax.semilogy([r["m"] for r in sub], [r["min_ratio"] for r in sub], "o-", label=f"k={k:g}")
        ax.legend()
        _style(ax, "m", "min coercivity ratio")
    else:
        plt.close(fig)
        return None
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
