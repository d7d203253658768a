"""Matplotlib rendering for the report files the CLI writes.

Each report-emitting subcommand can drop a PNG next to its delimited output.
All figures use the Agg backend so runs stay headless.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_selection_figure(report, path):
    """Scatter of both selection criteria, selected pair highlighted."""
    distances = dict(report.sim_ranking)
    overlaps = dict(report.overlap_ranking)
    fig, ax = plt.subplots(figsize=(5, 4))
    for vid in distances:
        selected = vid in report.selected_pair
        ax.scatter(distances[vid], overlaps[vid],
                   s=80 if selected else 40,
                   color="tab:red" if selected else "tab:blue",
                   zorder=3 if selected else 2)
        ax.annotate(vid, (distances[vid], overlaps[vid]),
                    textcoords="offset points", xytext=(6, 4), fontsize=9)
    ax.set_xlabel("centroid distance to target (lower = closer)")
    ax.set_ylabel("weighted token overlap with target")
    ax.set_title(f"source candidates for {report.target_id}")
    ax.grid(alpha=0.3)
    _save(fig, path)


def save_trace_figure(step_stats, path):
    """Loss components and discriminator accuracies over training steps."""
    steps = [s.step for s in step_stats]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax1.plot(steps, [s.l_task for s in step_stats], label="task")
    ax1.plot(steps, [s.l_inv for s in step_stats], label="invariant")
    ax1.plot(steps, [s.l_spc for s in step_stats], label="specific")
    ax1.plot(steps, [s.l_total for s in step_stats], label="total", color="black", alpha=0.5)
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.plot(steps, [s.acc_inv for s in step_stats], label="invariant discriminator")
    ax2.plot(steps, [s.acc_spc for s in step_stats], label="specific discriminator")
    ax2.set_ylabel("batch accuracy")
    ax2.set_xlabel("step")
    ax2.set_ylim(-0.05, 1.05)
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)
    _save(fig, path)


def save_sweep_figure(rows, metric_columns, path):
    """Metric-vs-lambda lines, one per evaluated corpus set."""
    lams = [r["lambda"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 4))
    for col in metric_columns:
        values = [r.get(col) for r in rows]
        if any(v is None for v in values):
            continue
        ax.plot(lams, values, marker="o", label=col)
    ax.set_xlabel("reversal strength (lambda)")
    ax.set_ylabel("metric")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def save_ablation_figure(rows, metric_columns, path):
    """Grouped bars, one group per loss-toggle row."""
    labels = [r["label"] for r in rows]
    x = range(len(labels))
    width = 0.8 / max(1, len(metric_columns))
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, col in enumerate(metric_columns):
        values = [r.get(col) for r in rows]
        if any(v is None for v in values):
            continue
        ax.bar([i + k * width for i in x], values, width=width, label=col)
    ax.set_xticks([i + 0.4 - width / 2 for i in x])
    ax.set_xticklabels(labels)
    ax.set_ylabel("metric")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    _save(fig, path)


def save_cka_figure(report, path):
    """Heatmap of the pairwise CKA matrix."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(report.matrix, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(report.variety_ids)))
    ax.set_yticks(range(len(report.variety_ids)))
    ax.set_xticklabels(report.variety_ids)
    ax.set_yticklabels(report.variety_ids)
    for i in range(len(report.variety_ids)):
        for j in range(len(report.variety_ids)):
            ax.text(j, i, f"{report.matrix[i, j]:.3f}", ha="center", va="center",
                    color="white" if report.matrix[i, j] < 0.6 else "black", fontsize=8)
    ax.set_title(f"pairwise CKA ({report.feature_stage})")
    fig.colorbar(im, ax=ax, shrink=0.85)
    _save(fig, path)
