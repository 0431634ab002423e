"""Pairwise method comparison: Shapiro-Wilk gate, paired t-test or
Wilcoxon signed-rank test, and the four-glyph verdict classification.

The normality test runs on the paired differences.  If it passes at the
significance level, the paired t-test decides; otherwise the Wilcoxon
signed-rank test does.  All tests are two-sided.  No multiple-comparison
correction is applied.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import special

from .errors import ContractViolation, DegenerateSampleError

__all__ = [
    "shapiro_wilk",
    "paired_t_test",
    "wilcoxon_signed_rank",
    "PairedSampleSet",
    "Verdict",
    "VerdictTable",
    "compare_methods",
    "BETTER_STRONG",
    "BETTER_WEAK",
    "WORSE_WEAK",
    "WORSE_STRONG",
    "INCOMPARABLE",
]

BETTER_STRONG = "✓✓"   # significantly better
BETTER_WEAK = "✓"           # better mean, statistically comparable
WORSE_WEAK = "✗"            # worse mean, statistically comparable
WORSE_STRONG = "✗✗"    # significantly worse
INCOMPARABLE = "incomparable"


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _norm_ppf(q: np.ndarray) -> np.ndarray:
    return special.ndtri(q)


def _poly(coeffs, x: float) -> float:
    """coeffs[0] + coeffs[1] x + coeffs[2] x^2 + ..."""
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def shapiro_wilk(x) -> tuple[float, float]:
    """Shapiro-Wilk normality test (Royston's 1995 approximation, AS R94).

    Returns (W, p) for 3 <= n <= 5000.  A constant sample is degenerate.
    """
    v = np.asarray(x, dtype=np.float64).ravel()
    n = v.size
    if n < 3 or n > 5000:
        raise ContractViolation(f"shapiro_wilk requires 3 <= n <= 5000, got {n}")
    if np.ptp(v) == 0.0:
        raise DegenerateSampleError("shapiro_wilk: all sample values identical")

    y = np.sort(v)
    # Blom normal scores and their normalized coefficient vector
    m = _norm_ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    ssq_m = float(m @ m)
    c = m / math.sqrt(ssq_m)

    u = 1.0 / math.sqrt(n)
    a = np.empty(n)
    if n == 3:
        a[0] = -math.sqrt(0.5)
        a[1] = 0.0
        a[2] = math.sqrt(0.5)
    else:
        a_n = c[-1] + _poly((0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056), u)
        if n <= 5:
            phi = (ssq_m - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n ** 2)
            a[1:-1] = m[1:-1] / math.sqrt(phi)
            a[-1] = a_n
            a[0] = -a_n
        else:
            a_n1 = c[-2] + _poly((0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633), u)
            phi = (ssq_m - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / \
                (1.0 - 2.0 * a_n ** 2 - 2.0 * a_n1 ** 2)
            a[2:-2] = m[2:-2] / math.sqrt(phi)
            a[-1], a[-2] = a_n, a_n1
            a[0], a[1] = -a_n, -a_n1

    num = float(a @ y) ** 2
    den = float(((y - y.mean()) ** 2).sum())
    w = num / den
    w = min(w, 1.0)

    if n == 3:
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return w, float(np.clip(p, 0.0, 1.0))

    one_minus_w = max(1.0 - w, 1e-99)
    if n <= 11:
        gamma = -2.273 + 0.459 * n
        mu = _poly((0.5440, -0.39978, 0.025054, -0.0006714), n)
        sigma = math.exp(_poly((1.3822, -0.77857, 0.062767, -0.0020322), n))
        arg = gamma - math.log(one_minus_w)
        if arg <= 0.0:
            return w, 0.0
        z = (-math.log(arg) - mu) / sigma
    else:
        ln_n = math.log(n)
        mu = _poly((-1.5861, -0.31082, -0.083751, 0.0038915), ln_n)
        sigma = math.exp(_poly((-0.4803, -0.082676, 0.0030302), ln_n))
        z = (math.log(one_minus_w) - mu) / sigma
    return w, _norm_sf(z)


def paired_t_test(a, b) -> float:
    """Two-sided paired t-test p-value on the differences a - b."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ContractViolation(f"paired_t_test: lengths differ ({a.size} vs {b.size})")
    d = a - b
    n = d.size
    if n < 2:
        raise ContractViolation("paired_t_test requires n >= 2")
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise DegenerateSampleError("paired_t_test: zero-variance differences")
    t = d.mean() / (sd / math.sqrt(n))
    # two-sided p from the Student-t survival function
    return float(2.0 * special.stdtr(n - 1, -abs(t)))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; ties share the average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


_EXACT_LIMIT = 25


def _wilcoxon_exact_p(ranks: np.ndarray, w_min: float) -> float:
    """Exact two-sided p by enumerating the null distribution of the rank
    sum over all sign assignments (doubled ranks keep counts integral)."""
    r2 = np.rint(2.0 * ranks).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in r2:
        nxt = counts.copy()
        nxt[r:] += counts[:total + 1 - r]
        counts = nxt
    threshold = int(round(2.0 * w_min))
    p = 2.0 * counts[:threshold + 1].sum() / counts.sum()
    return min(p, 1.0)


def _wilcoxon_normal_p(ranks: np.ndarray, w_min: float) -> float:
    """Normal approximation with tie correction and continuity correction."""
    n = ranks.size
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= (tie_counts.astype(np.float64) ** 3 - tie_counts).sum() / 48.0
    if var <= 0.0:
        raise DegenerateSampleError("wilcoxon: zero variance under ties")
    z = (w_min - mean + 0.5) / math.sqrt(var)
    return min(2.0 * _norm_cdf(z), 1.0)


def wilcoxon_signed_rank(a, b, force_branch: str | None = None) -> float:
    """Two-sided Wilcoxon signed-rank p-value on the differences a - b.

    Zero differences are dropped; ties share average ranks.  The null
    distribution is exact (full enumeration) for up to 25 effective
    samples, and a tie- and continuity-corrected normal approximation
    beyond.  `force_branch` ("exact" | "approx") overrides the cutoff.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ContractViolation(f"wilcoxon: lengths differ ({a.size} vs {b.size})")
    d = a - b
    d = d[d != 0.0]
    if d.size == 0:
        raise DegenerateSampleError("wilcoxon: all differences are zero")
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w_min = min(w_plus, w_minus)
    if force_branch == "exact" or (force_branch is None and d.size <= _EXACT_LIMIT):
        return _wilcoxon_exact_p(ranks, w_min)
    return _wilcoxon_normal_p(ranks, w_min)


# ---------------------------------------------------------------------------
# verdicts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairedSampleSet:
    """Aligned per-image metric values for two methods."""

    method_a: str
    method_b: str
    metric: str
    values_a: tuple
    values_b: tuple
    higher_is_better: bool = True

    def __post_init__(self):
        if len(self.values_a) != len(self.values_b):
            raise ContractViolation(
                f"{self.method_a} vs {self.method_b} [{self.metric}]: "
                f"unaligned vectors ({len(self.values_a)} vs {len(self.values_b)})")
        if len(self.values_a) < 3:
            raise ContractViolation(
                f"{self.method_a} vs {self.method_b} [{self.metric}]: need n >= 3")


@dataclass(frozen=True)
class Verdict:
    """Outcome of one pairwise cell: test used, p-value and glyph."""

    test: str
    p_value: float
    classification: str


def _classify(p: float, a_better: bool, alpha: float) -> str:
    if p < alpha:
        return BETTER_STRONG if a_better else WORSE_STRONG
    return BETTER_WEAK if a_better else WORSE_WEAK


def verdict_for(sample: PairedSampleSet, alpha: float = 0.05) -> Verdict:
    """Gate on Shapiro-Wilk over the differences, then test and classify."""
    a = np.asarray(sample.values_a, dtype=np.float64)
    b = np.asarray(sample.values_b, dtype=np.float64)
    d = a - b
    if not d.any():
        return Verdict("none", float("nan"), INCOMPARABLE)
    try:
        _, p_sw = shapiro_wilk(d)
        normal = p_sw > alpha
    except DegenerateSampleError:
        normal = False
    try:
        if normal:
            test, p = "t", paired_t_test(a, b)
        else:
            test, p = "wilcoxon", wilcoxon_signed_rank(a, b)
    except DegenerateSampleError:
        return Verdict("none", float("nan"), INCOMPARABLE)
    diff = float(a.mean() - b.mean())
    a_better = diff > 0 if sample.higher_is_better else diff < 0
    return Verdict(test, p, _classify(p, a_better, alpha))


@dataclass
class VerdictTable:
    """All pairwise verdicts: rows are method pairs, columns are metrics."""

    metrics: list[str]
    pairs: list[tuple[str, str]]
    cells: dict = field(default_factory=dict)  # (pair, metric) -> Verdict
    alpha: float = 0.05

    def verdict(self, method_a: str, method_b: str, metric: str) -> Verdict:
        return self.cells[((method_a, method_b), metric)]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["pair", *self.metrics])
        for pair in self.pairs:
            row = [f"{pair[0]} vs {pair[1]}"]
            for metric in self.metrics:
                v = self.cells[(pair, metric)]
                p = "nan" if math.isnan(v.p_value) else f"{v.p_value:.3e}"
                row.append(f"p={p};{v.classification}")
            writer.writerow(row)
        return buf.getvalue()

    def to_text(self) -> str:
        """Human-readable grid mirroring the glyph table layout."""
        name_w = max(len(f"{a} vs {b}") for a, b in self.pairs) + 2
        col_w = max(max(len(m) for m in self.metrics), 10) + 2
        lines = [" " * name_w + "".join(m.rjust(col_w) for m in self.metrics)]
        for pair in self.pairs:
            glyphs = []
            ps = []
            for metric in self.metrics:
                v = self.cells[(pair, metric)]
                glyphs.append(v.classification.rjust(col_w))
                ps.append(("-" if math.isnan(v.p_value)
                           else f"{v.p_value:.2e}").rjust(col_w))
            lines.append(f"{pair[0]} vs {pair[1]}".ljust(name_w) + "".join(glyphs))
            lines.append("p-value".rjust(name_w - 2) + "  " + "".join(ps))
        return "\n".join(lines) + "\n"


def compare_methods(sets: list[PairedSampleSet], alpha: float = 0.05) -> VerdictTable:
    """Build the full verdict table for a collection of paired sample sets."""
    metrics: list[str] = []
    pairs: list[tuple[str, str]] = []
    for s in sets:
        if s.metric not in metrics:
            metrics.append(s.metric)
        pair = (s.method_a, s.method_b)
        if pair not in pairs:
            pairs.append(pair)
    table = VerdictTable(metrics=metrics, pairs=pairs, alpha=alpha)
    for s in sets:
        table.cells[((s.method_a, s.method_b), s.metric)] = verdict_for(s, alpha)
    return table


def build_sample_sets(per_method: dict[str, dict[str, dict[str, float]]],
                      metric_order, higher_is_better) -> list[PairedSampleSet]:
    """Pairwise sample sets from per-method {filename -> {metric -> value}}
    rows, aligned on the filenames every method shares."""
    methods = list(per_method)
    common: set[str] | None = None
    for rows in per_method.values():
        names = set(rows)
        common = names if common is None else common & names
    aligned = sorted(common or ())
    sets = []
    for ma, mb in combinations(methods, 2):
        for metric in metric_order:
            sets.append(PairedSampleSet(
                method_a=ma, method_b=mb, metric=metric,
                values_a=tuple(per_method[ma][n][metric] for n in aligned),
                values_b=tuple(per_method[mb][n][metric] for n in aligned),
                higher_is_better=higher_is_better[metric]))
    return sets
