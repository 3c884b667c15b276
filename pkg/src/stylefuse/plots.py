"""Optional figure for the gamma sweep (needs matplotlib)."""

from __future__ import annotations

from pathlib import Path


def plot_gamma_sweep(rows, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    gammas = [r["gamma"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(gammas, [r["sra"] for r in rows], "o-", color="tab:blue")
    ax.set_xlabel("gamma")
    ax.set_ylabel("SRA (%)", color="tab:blue")
    twin = ax.twinx()
    twin.plot(gammas, [r["fid"] for r in rows], "s--", color="tab:red")
    twin.set_ylabel("FID", color="tab:red")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
