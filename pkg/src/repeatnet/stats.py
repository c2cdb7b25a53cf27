"""Relative contribution and multi-run aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass


def relative_contribution(acc_base: float, acc_repeat: float, acc_dense: float) -> float:
    """Share (in percent) of the dense model's gain over base that the repeated model recovers.

    May be negative or exceed 100. Raises ZeroDivisionError when the dense and
    base accuracies coincide.
    """
    gain = acc_dense - acc_base
    if gain == 0:
        raise ZeroDivisionError("dense and base accuracies are equal; relative contribution undefined")
    return 100.0 * (acc_repeat - acc_base) / gain


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    n: int


def aggregate_runs(summaries) -> Aggregate:
    """Mean and sample standard deviation (N-1) of ``final_test_acc``.

    Accepts RunSummary objects, dicts, or bare floats. Summaries carrying a
    ``config_id`` must all share it.
    """
    values, configs = [], set()
    for s in summaries:
        if isinstance(s, (int, float)):
            values.append(float(s))
            continue
        get = s.get if isinstance(s, dict) else lambda k, d=None: getattr(s, k, d)
        values.append(float(get("final_test_acc")))
        cid = get("config_id", None)
        if cid is not None:
            configs.add(cid)
    if len(configs) > 1:
        raise ValueError(f"cannot aggregate runs of different configs: {sorted(configs)}")
    if len(values) < 2:
        raise ValueError(f"need at least 2 runs to aggregate, got {len(values)}")
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return Aggregate(mean, math.sqrt(var), n)


def format_table(rows: list[tuple[str, str, Aggregate]]) -> str:
    """Render ``(method, scale, aggregate)`` rows as a mean / std table."""
    header = f"{'Method':<14}{'Scale factor':>14}{'Mean Acc.':>12}{'Std Dev':>10}"
    lines = [header, "-" * len(header)]
    for method, scale, agg in rows:
        lines.append(f"{method:<14}{scale:>14}{agg.mean:>12.2f}{agg.std:>10.2f}")
    return "\n".join(lines)
