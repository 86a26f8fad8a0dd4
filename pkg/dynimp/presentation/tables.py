from typing import List, Optional, Sequence, Tuple

from dynimp.config import DYNIMP_METHODS
from dynimp.core.evaluation import AggregateResult
from dynimp.utils.text_manager import get_text

Table = Tuple[List[str], List[List[str]]]


def missingness_tier(level: float) -> str:
    """mild / medium / severe by the thresholds in texts.yaml."""
    tiers = get_text("tables.tiers")
    for name, upper in sorted(tiers.items(), key=lambda item: item[1]):
        if level <= upper:
            return name
    return max(tiers, key=tiers.get)


def method_title(method: str) -> str:
    return get_text("tables.method_titles").get(method, method)


def format_ba(mean: Optional[float], half_width: Optional[float]) -> str:
    if mean is None:
        return "n/a"
    return f"{mean:.4f} ± {half_width:.4f}"


def _lookup(aggregates: Sequence[AggregateResult]):
    return {(a.method, a.level): a for a in aggregates}


def _cell(index, method: str, level: float) -> str:
    row = index.get((method, level))
    return format_ba(row.mean_ba, row.ci_half_width) if row else "n/a"


def table1(aggregates: Sequence[AggregateResult], methods: Sequence[str], levels: Sequence[float]) -> Table:
    """One row per missingness level, one column per method."""
    index = _lookup(aggregates)
    headers = ["level", "tier", *(method_title(m) for m in methods)]
    rows = [[f"{level:g}", missingness_tier(level), *(_cell(index, m, level) for m in methods)] for level in levels]
    return headers, rows


def table2(aggregates: Sequence[AggregateResult], methods: Sequence[str], levels: Sequence[float]) -> Table:
    """One row per DynImp padding variant, one column per missingness level."""
    index = _lookup(aggregates)
    variants = [m for m in DYNIMP_METHODS if m in methods]
    headers = ["variant", *(f"{level:g}" for level in levels)]
    rows = [[method_title(m), *(_cell(index, m, level) for level in levels)] for m in variants]
    return headers, rows


def render(table: Table) -> str:
    """Plain-text, column-aligned rendering."""
    headers, rows = table
    widths = [max(len(str(r[i])) for r in [headers, *rows]) for i in range(len(headers))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(headers, widths)).rstrip()]
    lines += ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines)


def reference_footer() -> str:
    return "\n".join([get_text("reference.header"), *get_text("reference.rows")])


def experiment_report(aggregates: Sequence[AggregateResult], methods: Sequence[str], levels: Sequence[float],
                      results: int, errors: int) -> str:
    parts = [get_text("experiment.summary", results=results, aggregates=len(aggregates), errors=errors),
             render(table1(aggregates, methods, levels))]
    if any(m in DYNIMP_METHODS for m in methods):
        parts.append(render(table2(aggregates, methods, levels)))
    parts.append(reference_footer())
    return "\n\n".join(parts)
