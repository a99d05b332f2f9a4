"""Aggregate tables recomputed from a metrics CSV.

The report is derived purely from the frames file so it can run long after
a simulation, on any machine.  Utilization integrals use a left-rectangle
rule over the frame intervals; fairness, waits, and preemption counts come
from the cumulative columns of the final frame.
"""

from __future__ import annotations

import csv
from pathlib import Path

BASE_COLUMNS = [
    "time", "util_vcpus", "util_memory", "shared_util",
    "queue_len", "wait_mean", "wait_p95", "preempted",
]


class ReportError(Exception):
    pass


def load_frames(metrics_csv: str | Path) -> tuple[list[str], list[dict[str, float]]]:
    with open(metrics_csv, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ReportError(f"{metrics_csv}: empty metrics file") from None
        if header[: len(BASE_COLUMNS)] != BASE_COLUMNS:
            raise ReportError(
                f"{metrics_csv}: header mismatch, expected leading columns {BASE_COLUMNS}"
            )
        rows = []
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise ReportError(f"{metrics_csv}:{lineno}: expected {len(header)} fields")
            try:
                rows.append({col: float(v) for col, v in zip(header, row)})
            except ValueError:
                raise ReportError(f"{metrics_csv}:{lineno}: non-numeric field") from None
    return header, rows


def _projects_in(header: list[str]) -> list[str]:
    return sorted(
        col[len("cpu_seconds_shared_"):] for col in header if col.startswith("cpu_seconds_shared_")
    )


def build_report(metrics_csv: str | Path) -> str:
    header, rows = load_frames(metrics_csv)
    lines = [f"frames: {len(rows)}"]
    if not rows:
        lines.append("utilization_integral vcpus=0.000000 memory=0.000000")
        return "\n".join(lines) + "\n"

    span = rows[-1]["time"] - rows[0]["time"]
    if span > 0:
        util_v = util_m = 0.0
        for a, b in zip(rows, rows[1:]):
            dt = b["time"] - a["time"]
            util_v += a["util_vcpus"] * dt
            util_m += a["util_memory"] * dt
        util_v /= span
        util_m /= span
    else:
        util_v = rows[-1]["util_vcpus"]
        util_m = rows[-1]["util_memory"]
    lines.append(f"utilization_integral vcpus={util_v:.6f} memory={util_m:.6f}")

    last = rows[-1]
    projects = _projects_in(header)
    total_shared = sum(last[f"cpu_seconds_shared_{p}"] for p in projects)
    for p in projects:
        shared = last[f"cpu_seconds_shared_{p}"]
        private = last[f"cpu_seconds_private_{p}"]
        fraction = shared / total_shared if total_shared > 0 else 0.0
        lines.append(
            f"project {p} cpu_seconds_shared={shared:.3f} cpu_seconds_private={private:.3f} "
            f"shared_fraction={fraction:.6f}"
        )
    lines.append(f"waits mean={last['wait_mean']:.3f} p95={last['wait_p95']:.3f}")
    lines.append(f"preemptions {int(last['preempted'])}")
    return "\n".join(lines) + "\n"
