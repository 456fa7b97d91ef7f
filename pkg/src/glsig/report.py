"""Summaries and figures for batches of trial records.

Records are the dicts written by :func:`glsig.scenario.write_result` (one
per trial).  The summary columns are success count, iterations, wall time
and simulated time; simulated time counts simulator steps only, so it
excludes planning.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass
class Summary:
    scenario: str
    ablation: str
    n: int
    successes: int
    iterations_mean: float
    iterations_std: float
    wall_mean: float
    wall_std: float
    sim_mean: float
    sim_std: float
    regrasps_mean: float

    def to_dict(self) -> dict:
        return asdict(self)

    def text(self) -> str:
        return (
            f"{self.scenario} [{self.ablation}]  success {self.successes}/{self.n}  "
            f"iterations {self.iterations_mean:.1f} +/- {self.iterations_std:.1f}  "
            f"wall {self.wall_mean:.2f} +/- {self.wall_std:.2f} s  "
            f"sim {self.sim_mean:.2f} +/- {self.sim_std:.2f} s  "
            f"regrasps {self.regrasps_mean:.2f}"
        )


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return float("nan"), float("nan")
    return float(a.mean()), float(a.std())


def summarize(records: list[dict]) -> Summary:
    """Pool a batch of records from one scenario and ablation."""
    if not records:
        raise ValueError("nothing to summarize")
    it = _mean_std([r["iterations"] for r in records])
    wall = _mean_std([r["wall_time"] for r in records])
    sim = _mean_std([r["sim_time"] for r in records])
    return Summary(
        scenario=records[0]["scenario"],
        ablation=records[0].get("ablation", "full"),
        n=len(records),
        successes=sum(bool(r["success"]) for r in records),
        iterations_mean=it[0],
        iterations_std=it[1],
        wall_mean=wall[0],
        wall_std=wall[1],
        sim_mean=sim[0],
        sim_std=sim[1],
        regrasps_mean=float(np.mean([r["regrasps"] for r in records])),
    )


def group_records(records: list[dict]) -> dict:
    """Records keyed by (scenario, ablation), in first-seen order."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r["scenario"], r.get("ablation", "full")), []).append(r)
    return groups


def geodesic_progress(record: dict) -> list[float]:
    """Min geodesic distance of the grasps to l_k before the first regrasp and after each executed one."""
    out = []
    for e in record.get("regrasp_log", []):
        if not e.get("executed"):
            continue
        if not out and e.get("d0") is not None:
            out.append(e["d0"])
        if e.get("d_star") is not None:
            out.append(e["d_star"])
    return out


def strictly_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values[:-1], values[1:]))


def first_blocked(record: dict) -> tuple[int, str] | None:
    """(position in the regrasp log, signature text) of the first blocklisting."""
    for k, e in enumerate(record.get("regrasp_log", [])):
        if e.get("blocklisted"):
            return k, e["blocklisted"]
    return None


def route_reattempts(record: dict) -> int:
    """Executed regrasps after the first blocklisting that land back on the blocked signature."""
    fb = first_blocked(record)
    if fb is None:
        return 0
    k, sig = fb
    return sum(
        1 for e in record["regrasp_log"][k:]
        if e.get("executed") and e.get("signature") == sig
    )


def recurrences_after_block(record: dict) -> int:
    """signature_history entries logged after the first blocklisting that equal the blocked signature."""
    fb = first_blocked(record)
    if fb is None:
        return 0
    k, sig = fb
    entry = record["regrasp_log"][k]
    # the history only logs changes, so a regrasp that lands back on the
    # blocked signature leaves no entry of its own
    n = int(entry.get("executed", False) and entry.get("signature") == sig)
    return n + sum(1 for i, s in record["signature_history"] if i > entry["iteration"] and s == sig)


# -- figures -------------------------------------------------------------------------------------

def _signature_timeline(ax, records):
    for r in records:
        labels: dict = {}
        xs, ys = [], []
        for i, s in r["signature_history"]:
            ys.append(labels.setdefault(s, len(labels)))
            xs.append(i)
        if not xs:
            continue
        xs.append(r["iterations"])
        ys.append(ys[-1])
        ax.step(xs, ys, where="post", alpha=0.6, label=f"seed {r['seed']}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("distinct signature (order of first visit)")
    ax.set_title("signature history")


def render_figures(records: list[dict], out_dir) -> list[Path]:
    """Write summary figures (PNG) into ``out_dir``; returns the paths written."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    groups = group_records(records)
    names = [f"{s}\n{a}" for s, a in groups]
    sums = [summarize(g) for g in groups.values()]

    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    x = np.arange(len(sums))
    axes[0].bar(x, [s.successes / s.n for s in sums])
    axes[0].set_ylim(0, 1.05)
    axes[0].set_ylabel("success rate")
    axes[1].bar(x, [s.wall_mean for s in sums], yerr=[s.wall_std for s in sums], capsize=4)
    axes[1].set_ylabel("wall time [s]")
    axes[2].bar(x, [s.sim_mean for s in sums], yerr=[s.sim_std for s in sums], capsize=4)
    axes[2].set_ylabel("sim time [s]")
    for ax in axes:
        ax.set_xticks(x, names, fontsize=8)
    fig.tight_layout()
    p = out / "summary.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    for (scen, abl), recs in groups.items():
        fig, axes = plt.subplots(1, 2, figsize=(11, 4))
        _signature_timeline(axes[0], recs)
        for r in recs:
            prog = geodesic_progress(r)
            if prog:
                axes[1].plot(range(len(prog)), prog, marker="o", alpha=0.6)
        axes[1].set_xlabel("executed regrasp")
        axes[1].set_ylabel("min |l - l_k|")
        axes[1].set_title("geodesic distance of the grasps to the keypoint")
        fig.suptitle(f"{scen} [{abl}]")
        fig.tight_layout()
        p = out / f"{scen}_{abl}.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths
