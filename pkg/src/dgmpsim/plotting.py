"""Optional PNG figures rendered from an aggregated sweep CSV (needs matplotlib)."""

from __future__ import annotations

from pathlib import Path


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _series(rows, x_key, group_keys):
    groups = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in group_keys), []).append(row)
    for key, cell in groups.items():
        cell.sort(key=lambda r: r[x_key])
        yield key, cell


def plot_summary(rows: list[dict], out_dir) -> list[Path]:
    """Write ``se_vs_G.png``, ``nmse_vs_G.png`` and ``ber_vs_snr.png``; returns the paths."""
    plt = _pyplot()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    for metric, label, fname, log in (("se_mean", "spectral efficiency [bpcu]", "se_vs_G.png", False),
                                      ("nmse_db", "NMSE [dB]", "nmse_vs_G.png", False)):
        fig, ax = plt.subplots(figsize=(6, 4))
        for (scheme, snr), cell in _series(rows, "G", ("scheme", "snr_db")):
            ax.plot([r["G"] for r in cell], [r[metric] for r in cell], marker="o", label=f"{scheme}, {snr:g} dB")
        ax.set_xlabel("training symbols G")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / fname, dpi=120)
        plt.close(fig)
        written.append(out / fname)

    fig, ax = plt.subplots(figsize=(6, 4))
    for (scheme, G), cell in _series(rows, "snr_db", ("scheme", "G")):
        ax.semilogy([r["snr_db"] for r in cell], [max(r["ber_mean"], 1e-7) for r in cell], marker="s",
                    label=f"{scheme}, G={G}")
    ax.set_xlabel("SNR [dB]")
    ax.set_ylabel("BER (16-QAM)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "ber_vs_snr.png", dpi=120)
    plt.close(fig)
    written.append(out / "ber_vs_snr.png")
    return written
