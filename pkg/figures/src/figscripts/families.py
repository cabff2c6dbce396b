"""One rendering function per figure family.

Each family declares the columns it needs; inputs are validated before
any drawing happens so schema drift fails loudly rather than producing a
misleading plot.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schema import SchemaError, read_csv, require_columns

BLOCH_COLUMNS = ["t", "dn", "y", "x", "yb", "z", "purity", "ee", "gg", "re_eg", "im_eg"]


def _load_all(paths: list[str], columns: list[str]) -> list[dict]:
    if not paths:
        raise SchemaError("no input CSV files given")
    datasets = []
    for p in paths:
        data = read_csv(p)
        require_columns(data, columns, str(p))
        data["__name__"] = Path(p).stem
        datasets.append(data)
    return datasets


def render_fig1(paths: list[str], out: str) -> None:
    """Measurement records and Bloch-sphere coordinates of single
    trajectories (one column of panels per input file)."""
    datasets = _load_all(paths, BLOCH_COLUMNS)
    fig, axes = plt.subplots(
        2, len(datasets), figsize=(5.0 * len(datasets), 6.0), squeeze=False, sharex=True
    )
    for col, d in enumerate(datasets):
        top, bottom = axes[0][col], axes[1][col]
        if np.any(d["dn"] > 0):
            for t_jump in d["t"][d["dn"] > 0]:
                top.axvline(t_jump, color="tab:red", lw=0.8, alpha=0.8)
        top.plot(d["t"], d["y"], lw=0.4, color="tab:blue", label="current")
        top.set_ylabel("record")
        top.set_title(d["__name__"])
        top.legend(loc="upper right", fontsize=8)
        for key, color in (("x", "tab:green"), ("yb", "tab:orange"), ("z", "tab:blue")):
            bottom.plot(d["t"], d[key], lw=0.9, label=key)
        bottom.plot(d["t"], d["purity"], lw=0.9, ls="--", color="black", label="purity")
        bottom.set_xlabel("t")
        bottom.set_ylabel("Bloch components")
        bottom.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_fig2(paths: list[str], out: str) -> None:
    """Euler vs higher-order purity traces with a guide line at one."""
    datasets = _load_all(paths, ["t", "purity_euler", "purity_cpqt"])
    fig, axes = plt.subplots(len(datasets), 1, figsize=(6.0, 2.4 * len(datasets)), squeeze=False)
    for row, d in enumerate(datasets):
        ax = axes[row][0]
        ax.plot(d["t"], d["purity_euler"], lw=0.9, color="tab:red", label="first order")
        ax.plot(d["t"], d["purity_cpqt"], lw=0.9, ls="--", color="tab:blue", label="higher order")
        ax.axhline(1.0, color="gray", lw=0.8)
        ax.set_ylabel("purity")
        ax.set_title(d["__name__"], fontsize=9)
        if row == 0:
            ax.legend(loc="lower left", fontsize=8)
    axes[-1][0].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


_ME_COLUMNS = [
    "t",
    "ee_exact", "gg_exact", "re_eg_exact", "im_eg_exact",
    "ee_map", "gg_map", "re_eg_map", "im_eg_map",
    "ee_ens", "gg_ens", "re_eg_ens", "im_eg_ens",
]


def render_fig3(paths: list[str], out: str) -> None:
    """State components: exact, second-order map, and ensemble average."""
    datasets = _load_all(paths, _ME_COLUMNS)
    fig, axes = plt.subplots(len(datasets), 1, figsize=(6.5, 3.0 * len(datasets)), squeeze=False)
    colors = {"ee": "tab:blue", "gg": "tab:red", "re_eg": "tab:purple", "im_eg": "tab:orange"}
    for row, d in enumerate(datasets):
        ax = axes[row][0]
        for comp, color in colors.items():
            ax.plot(d["t"], d[f"{comp}_ens"], lw=0.8, color=color, label=comp)
            ax.plot(d["t"], d[f"{comp}_map"], lw=1.0, ls="--", color=color)
            ax.plot(d["t"], d[f"{comp}_exact"], lw=1.0, ls="-.", color=color)
        ax.set_ylabel("components")
        ax.set_title(f"{d['__name__']} (solid: ensemble, dashed: map, dash-dot: exact)", fontsize=8)
        if row == 0:
            ax.legend(loc="upper right", fontsize=8, ncol=4)
    axes[-1][0].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_fig5(paths: list[str], out: str) -> None:
    """Filtered vs ensemble-averaged z, and the deviation with error bars."""
    datasets = _load_all(paths, ["t", "z_filter", "z_ensemble", "dz", "stderr"])
    fig, axes = plt.subplots(2, len(datasets), figsize=(5.5 * len(datasets), 5.0), squeeze=False)
    for col, d in enumerate(datasets):
        top, bottom = axes[0][col], axes[1][col]
        top.plot(d["t"], d["z_filter"], lw=1.0, color="tab:purple", label="filtered")
        top.plot(d["t"], d["z_ensemble"], lw=0.8, color="tab:blue", label="ensemble average")
        top.set_ylabel("z")
        top.set_title(d["__name__"], fontsize=9)
        top.legend(fontsize=8)
        bottom.fill_between(
            d["t"], -3 * d["stderr"], 3 * d["stderr"], color="tab:blue", alpha=0.25,
            label="3 standard errors",
        )
        bottom.plot(d["t"], d["dz"], lw=0.7, color="tab:red", label="deviation")
        bottom.axhline(0.0, color="gray", lw=0.6)
        bottom.set_xlabel("t")
        bottom.set_ylabel("dz")
        bottom.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_fig6(paths: list[str], out: str) -> None:
    """Effective-member-count decay for each role assignment."""
    datasets = _load_all(paths, ["t", "n_eff"])
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for d in datasets:
        ax.plot(d["t"], d["n_eff"], lw=1.0, label=d["__name__"])
    ax.set_xlabel("t")
    ax.set_ylabel("effective members")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_fig7(paths: list[str], out: str) -> None:
    """Constancy of the filter/effect pairing along each record."""
    datasets = _load_all(
        paths, ["t", "pairing", "trace_filter_unnorm", "trace_effect", "trace_filter_norm"]
    )
    fig, axes = plt.subplots(len(datasets), 1, figsize=(6.0, 2.8 * len(datasets)), squeeze=False)
    for row, d in enumerate(datasets):
        ax = axes[row][0]
        ax.plot(d["t"], d["trace_filter_unnorm"], lw=0.8, color="lightblue", label="Tr filter (unnorm.)")
        ax.plot(d["t"], d["trace_effect"], lw=0.8, color="tab:blue", label="Tr effect")
        ax.plot(d["t"], d["pairing"], lw=1.3, ls=":", color="tab:red", label="pairing")
        ax.plot(d["t"], d["trace_filter_norm"], lw=1.0, ls="-.", color="tab:purple", label="Tr filter (norm.)")
        ax.set_yscale("log")
        ax.set_ylabel("traces")
        ax.set_title(d["__name__"], fontsize=9)
        if row == 0:
            ax.legend(fontsize=8, ncol=2)
    axes[-1][0].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


_SMOOTH_COLUMNS = [
    "t",
    "x_f", "yb_f", "z_f", "purity_f", "fidelity_f",
    "x_s", "yb_s", "z_s", "purity_s", "fidelity_s",
    "x_t", "yb_t", "z_t", "purity_t", "n_eff",
]


def render_fig8(paths: list[str], out: str) -> None:
    """Filtered, smoothed and true states for single record pairs."""
    datasets = _load_all(paths, _SMOOTH_COLUMNS)
    fig, axes = plt.subplots(3, len(datasets), figsize=(5.5 * len(datasets), 7.5), squeeze=False)
    styles = (("f", "tab:blue", "filtered"), ("s", "tab:purple", "smoothed"), ("t", "tab:green", "true"))
    for col, d in enumerate(datasets):
        ax_z, ax_p, ax_fid = axes[0][col], axes[1][col], axes[2][col]
        for suffix, color, label in styles:
            ax_z.plot(d["t"], d[f"z_{suffix}"], lw=0.9, color=color, label=label)
        ax_z.set_ylabel("z")
        ax_z.set_title(d["__name__"], fontsize=9)
        ax_z.legend(fontsize=8)
        for suffix, color, label in styles:
            ax_p.plot(d["t"], d[f"purity_{suffix}"], lw=0.9, color=color, label=label)
        ax_p.set_ylabel("purity")
        for suffix, color, label in styles[:2]:
            ax_fid.plot(d["t"], d[f"fidelity_{suffix}"], lw=0.9, color=color, label=label)
        ax_fid.set_ylabel("fidelity to true")
        ax_fid.set_xlabel("t")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


_ALIGNED_COLUMNS = [
    "rel_t",
    "purity_f_mean", "purity_f_se", "purity_s_mean", "purity_s_se",
    "fid_f_mean", "fid_f_se", "fid_s_mean", "fid_s_se",
]


def render_fig9(paths: list[str], out: str) -> None:
    """Jump-aligned average purity and fidelity with error bands and a
    vertical guide at the jump time."""
    datasets = _load_all(paths, _ALIGNED_COLUMNS)
    d = datasets[0]
    fig, (ax_p, ax_f) = plt.subplots(2, 1, figsize=(6.0, 5.5), sharex=True)
    for ax, stem, ylabel in ((ax_p, "purity", "purity"), (ax_f, "fid", "fidelity to true")):
        for kind, color, label in (("f", "tab:blue", "filtered"), ("s", "tab:red", "smoothed")):
            mean = d[f"{stem}_{kind}_mean"]
            se = d[f"{stem}_{kind}_se"]
            ax.plot(d["rel_t"], mean, lw=1.0, color=color, label=label)
            ax.fill_between(d["rel_t"], mean - se, mean + se, color=color, alpha=0.25)
        ax.axvline(0.0, color="gray", lw=0.8)
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
    ax_f.set_xlabel("time from jump")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


FAMILIES = {
    "fig1": render_fig1,
    "fig2": render_fig2,
    "fig3": render_fig3,
    "fig5": render_fig5,
    "fig6": render_fig6,
    "fig7": render_fig7,
    "fig8": render_fig8,
    "fig9": render_fig9,
}
