"""Result reporting: relative improvement and the comparison table."""

from __future__ import annotations


def improvement(base: float, value: float) -> float:
    """Percent improvement of ``value`` over ``base``: 100 (base - value) / base."""
    if base == 0.0:
        raise ValueError("baseline RMSE must be nonzero")
    return 100.0 * (base - value) / base


def render_comparison(entries, baseline: str) -> str:
    """Aligned model-vs-baseline table.

    ``entries`` is a sequence of (name, rmse); the row named ``baseline``
    anchors the improvement column, which is printed to three decimals.
    """
    entries = [(str(name), float(rmse)) for name, rmse in entries]
    by_name = dict(entries)
    if baseline not in by_name:
        raise ValueError(f"baseline {baseline!r} is not among the entries")
    base = by_name[baseline]
    name_w = max(len("model"), max(len(name) for name, _ in entries))
    lines = [f"{'model':<{name_w}}  {'rmse':>8}  {'improved':>9}"]
    for name, rmse in entries:
        lines.append(f"{name:<{name_w}}  {rmse:>8.4f}  {improvement(base, rmse):>8.3f}%")
    return "\n".join(lines)
