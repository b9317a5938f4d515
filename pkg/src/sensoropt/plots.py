"""Report figures rendered next to the delimited outputs.

Both figures mirror the CSV files they accompany: the landscape figure
overlays exact and approximated returns per configuration, and the
estimator comparison figure shows per-seed absolute errors for the two
sampling policies.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_landscape_figure(rows: list[dict], path: str) -> None:
    """Plot exact vs approximated returns over ranked configurations.

    Rows must already be sorted by exact return (descending), matching
    the CSV ordering.
    """
    ranks = list(range(1, len(rows) + 1))
    exact = [row["exact_return"] for row in rows]
    approx = [row["approx_return"] for row in rows]

    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(ranks, exact, marker="o", markersize=3, linewidth=1.2, label="exact return")
    ax.plot(
        ranks, approx, marker="s", markersize=3, linewidth=1.2,
        label="second-order approximation",
    )
    infeasible = [r for r, row in zip(ranks, rows) if not row["feasible"]]
    if infeasible:
        floor = min(min(exact), min(approx))
        ax.plot(
            infeasible, [floor] * len(infeasible), linestyle="none",
            marker="x", color="crimson", markersize=4, label="over budget",
        )
    ax.set_xlabel("backup configuration (sorted by exact return)")
    ax.set_ylabel("expected return")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_estimator_comparison_figure(rows: list[dict], path: str) -> None:
    """Plot per-seed mean absolute errors of the two estimators."""
    momentum = [row["momentum_mae"] for row in rows]
    round_robin = [row["round_robin_mae"] for row in rows]

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for m_err, rr_err in zip(momentum, round_robin):
        ax.plot([1, 2], [m_err, rr_err], color="gray", alpha=0.4, linewidth=0.8)
    ax.boxplot([momentum, round_robin], tick_labels=["momentum", "round robin"],
               widths=0.5)
    ax.set_ylabel("mean absolute pair-return error")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
