"""Figure rendering for benchmark reports."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def render_benchmark_figures(cells, outdir, prefix: str = "benchmark"):
    """Render per-solver noise-sweep curves alongside the CSV output.

    One figure per solver: median rotation/translation/tensor error and the
    failure rate as functions of sigma_p, one curve per sigma_v value.
    Returns the list of written paths.
    """
    os.makedirs(outdir, exist_ok=True)
    by_solver: dict[str, list] = {}
    for c in cells:
        by_solver.setdefault(c.solver_id, []).append(c)
    written = []
    for solver_id, rows in by_solver.items():
        sigma_vs = sorted({r.sigma_v for r in rows})
        fig, axes = plt.subplots(1, 4, figsize=(13, 3.1))
        panels = [
            ("median_rot", "median rot err (rad)"),
            ("median_trans", "median trans err (rad)"),
            ("median_tensor", "median tensor err"),
            ("fail_rate", "failure rate"),
        ]
        for ax, (attr, label) in zip(axes, panels):
            for sv in sigma_vs:
                sel = sorted((r for r in rows if r.sigma_v == sv),
                             key=lambda r: r.sigma_p)
                ax.plot([r.sigma_p for r in sel],
                        [getattr(r, attr) for r in sel],
                        marker="o", label=f"sigma_v={sv:g}")
            ax.set_xlabel("sigma_p (px)")
            ax.set_title(label, fontsize=10)
            ax.grid(True, alpha=0.3)
            if attr != "fail_rate":
                ax.set_yscale("symlog", linthresh=1e-12)
        axes[0].legend(fontsize=8)
        fig.suptitle(f"{solver_id} noise sweep")
        fig.tight_layout()
        path = os.path.join(outdir, f"{prefix}_{solver_id}.png")
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)
    return written
