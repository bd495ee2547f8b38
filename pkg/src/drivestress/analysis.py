"""Campaign analysis: turns a record file into every summary table.

The analysis view mirrors the published tables: a per-attack impact table,
the noise dose-response with model selection, the CoC-partition statistics,
per-attack point-biserial correlations, monitor reports, the CoC ablation
table, the defense table with severity-conditioned deltas, a scenario-by-
attack heatmap, the constant-velocity baseline comparison, cross-attack
consistency, and failure-mode distributions.

Cells whose subgroup is too small for a test are set to None (absent) with
their counts intact, never silently dropped. All grouping happens on sorted
records so results are independent of record order.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import stats
from .campaign import AnalysisError, CampaignConfig
from .manifest import ManifestError, load_manifest
from .metrics import ade as ade_metric
from .modelio import constant_velocity_baseline
from .monitor import MonitorReport, monitor_report
from .records import EvalRecord
from .stats import FitResult, StatsError, TestResult
from .taxonomy import (
    FAILURE_LABELS,
    ConsistencyResult,
    TaxonomyError,
    classify_failure,
    classify_scenario,
    cross_attack_consistency,
)

_KIND_ORDER = {"noise": 0, "dark": 1, "bright": 2, "fog_light": 3, "fog_heavy": 4}


def condition_sort_key(record_or_label: EvalRecord | tuple[str, str, float | None]) -> tuple:
    """Canonical condition order: noise by sigma, then dark/bright/fog, then others."""
    if isinstance(record_or_label, EvalRecord):
        kind, label, sigma = record_or_label.kind, record_or_label.condition, record_or_label.sigma
    else:
        label, kind, sigma = record_or_label
    return (_KIND_ORDER.get(kind, 9), sigma if sigma is not None else 0.0, label)


@dataclass(frozen=True)
class AttackRow:
    condition: str
    kind: str
    n: int
    mean_ade: float
    mean_delta_ade: float
    coc_change_rate: float
    exceed_rate: float
    p_value: float | None
    p_adjusted: float | None
    significant: bool | None
    cohens_dz: float | None


@dataclass(frozen=True)
class DosePoint:
    sigma: float
    n: int
    mean_ade: float
    mean_delta_ade: float
    ci_lo: float
    ci_hi: float


@dataclass(frozen=True)
class DoseResponse:
    points: tuple[DosePoint, ...]
    ols: FitResult | None
    slope_test: TestResult | None
    fits: Mapping[str, FitResult]
    fit_failures: Mapping[str, str]
    ranking: tuple[tuple[str, float, float], ...]


@dataclass(frozen=True)
class PartitionStats:
    n_changed: int
    n_unchanged: int
    mean_changed: float | None
    mean_unchanged: float | None
    median_changed: float | None
    median_unchanged: float | None
    mean_ratio: float | None
    median_ratio: float | None
    welch_t: float | None
    p_value: float | None
    cohens_d: float | None


@dataclass(frozen=True)
class BiserialRow:
    condition: str
    n: int
    n_changed: int
    r_pb: float | None
    mean_l2_changed: float | None
    mean_l2_unchanged: float | None
    ratio: float | None


@dataclass(frozen=True)
class AblationRow:
    condition: str
    n: int
    ade_with: float
    ade_without: float
    delta: float
    pct_improvement: float | None
    cohens_dz: float | None
    p_t: float | None
    p_wilcoxon: float | None


@dataclass(frozen=True)
class AblationAverages:
    mean_ade_with: float
    mean_ade_without: float
    mean_delta: float
    mean_pct_improvement: float | None
    mean_cohens_dz: float | None


@dataclass(frozen=True)
class DefenseRow:
    defense: str
    mean_l2_by_condition: Mapping[str, float | None]
    avg_delta_vs_none: float | None


@dataclass(frozen=True)
class SeverityBucket:
    bucket: str
    n_pairs: int
    mean_undefended: float | None
    mean_defended: float | None
    delta: float | None


@dataclass(frozen=True)
class HeatmapCell:
    category: str
    condition: str
    n: int
    mean_delta_ade: float


@dataclass(frozen=True)
class BaselineComparison:
    n: int
    baseline_mean_ade: float
    model_mean_ade: float
    improvement_pct: float
    t: float | None
    p_value: float | None


@dataclass(frozen=True)
class FailureModeStats:
    condition: str
    n_flips: int
    fractions: Mapping[str, float]
    action_or_object_rate: float


@dataclass(frozen=True)
class CampaignSummary:
    n_records: int
    n_clips: int
    seed: int
    unsafe_threshold_m: float
    attack_table: tuple[AttackRow, ...]
    dose_response: DoseResponse | None
    partition: PartitionStats | None
    biserial: tuple[BiserialRow, ...]
    monitor: Mapping[str, MonitorReport]
    ablation: tuple[AblationRow, ...]
    ablation_averages: AblationAverages | None
    defense_table: tuple[DefenseRow, ...]
    severity_defense: Mapping[str, tuple[SeverityBucket, ...]]
    heatmap: tuple[HeatmapCell, ...]
    category_counts: Mapping[str, int]
    baseline: BaselineComparison | None
    cross_attack: ConsistencyResult | None
    failure_modes: tuple[FailureModeStats, ...]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def _primary_view(records: Sequence[EvalRecord]) -> list[EvalRecord]:
    return [r for r in records if r.with_coc and r.defense == "none"]


def _attack_table(attacked: Sequence[EvalRecord], threshold: float) -> tuple[AttackRow, ...]:
    groups: dict[str, list[EvalRecord]] = {}
    for r in attacked:
        groups.setdefault(r.condition, []).append(r)
    rows: list[AttackRow] = []
    p_values: list[float | None] = []
    for label in sorted(groups, key=lambda lb: condition_sort_key(groups[lb][0])):
        rs = groups[label]
        diffs = [r.delta_ade_m for r in rs]
        p = dz = None
        try:
            test = stats.paired_t_test(diffs)
            p, dz = test.p_value, test.effect_size
        except StatsError:
            pass
        rows.append(
            AttackRow(
                condition=label,
                kind=rs[0].kind,
                n=len(rs),
                mean_ade=_mean([r.ade_m for r in rs]),
                mean_delta_ade=_mean(diffs),
                coc_change_rate=_mean([float(r.coc_changed) for r in rs]),
                exceed_rate=_mean([float(r.l2_deviation_m > threshold) for r in rs]),
                p_value=p,
                p_adjusted=None,
                significant=None,
                cohens_dz=dz,
            )
        )
        p_values.append(p)
    present = [p for p in p_values if p is not None]
    if present:
        adjusted, flags = stats.bonferroni(present)
        it = iter(zip(adjusted, flags))
        merged = []
        for row in rows:
            if row.p_value is None:
                merged.append(row)
            else:
                adj, sig = next(it)
                merged.append(dataclasses.replace(row, p_adjusted=adj, significant=sig))
        rows = merged
    rows.sort(key=lambda r: (-r.mean_delta_ade, r.condition))
    return tuple(rows)


def _dose_response(
    attacked: Sequence[EvalRecord], seed: int, resamples: int
) -> DoseResponse | None:
    by_sigma: dict[float, list[EvalRecord]] = {}
    for r in attacked:
        if r.kind == "noise" and r.sigma is not None:
            by_sigma.setdefault(float(r.sigma), []).append(r)
    if not by_sigma:
        return None
    points: list[DosePoint] = []
    for sigma in sorted(by_sigma):
        rs = by_sigma[sigma]
        ades = [r.ade_m for r in rs]
        lo, hi = stats.bootstrap_ci(ades, "mean", b=resamples, seed=seed)
        points.append(
            DosePoint(
                sigma=sigma, n=len(rs), mean_ade=_mean(ades),
                mean_delta_ade=_mean([r.delta_ade_m for r in rs]),
                ci_lo=lo, ci_hi=hi,
            )
        )
    xs = [p.sigma for p in points]
    ys = [p.mean_ade for p in points]
    ols = slope_test = None
    fits: dict[str, FitResult] = {}
    failures: dict[str, str] = {}
    ranking: tuple[tuple[str, float, float], ...] = ()
    if len(points) >= 3:
        ols = stats.ols_fit(xs, ys)
        slope_test = stats.ols_slope_test(xs, ys)
        fits, failures = stats.fit_all_families(xs, ys)
        if fits:
            ranking = tuple(stats.aic_compare(list(fits.values())))
    return DoseResponse(
        points=tuple(points), ols=ols, slope_test=slope_test,
        fits=fits, fit_failures=failures, ranking=ranking,
    )


def _partition(attacked: Sequence[EvalRecord]) -> PartitionStats | None:
    if not attacked:
        return None
    changed = [r.l2_deviation_m for r in attacked if r.coc_changed]
    unchanged = [r.l2_deviation_m for r in attacked if not r.coc_changed]
    mean_c = _mean(changed) if changed else None
    mean_u = _mean(unchanged) if unchanged else None
    welch_t = p = d = None
    if len(changed) >= 2 and len(unchanged) >= 2:
        try:
            # t tests unchanged minus changed (negative when flips deviate more);
            # d standardizes changed minus unchanged (positive in the same case).
            test = stats.two_sample_t(changed, unchanged, equal_var=False)
            welch_t, p = test.statistic, test.p_value
            d = stats.cohens_d(unchanged, changed)
        except StatsError:
            pass
    return PartitionStats(
        n_changed=len(changed),
        n_unchanged=len(unchanged),
        mean_changed=mean_c,
        mean_unchanged=mean_u,
        median_changed=float(np.median(changed)) if changed else None,
        median_unchanged=float(np.median(unchanged)) if unchanged else None,
        mean_ratio=(mean_c / mean_u) if mean_c is not None and mean_u else None,
        median_ratio=(
            float(np.median(changed)) / float(np.median(unchanged))
            if changed and unchanged and np.median(unchanged) > 0
            else None
        ),
        welch_t=welch_t,
        p_value=p,
        cohens_d=d,
    )


def _biserial(attacked: Sequence[EvalRecord]) -> tuple[BiserialRow, ...]:
    groups: dict[str, list[EvalRecord]] = {}
    for r in attacked:
        groups.setdefault(r.condition, []).append(r)
    rows = []
    for label in sorted(groups, key=lambda lb: condition_sort_key(groups[lb][0])):
        rs = groups[label]
        labels = [int(r.coc_changed) for r in rs]
        l2 = [r.l2_deviation_m for r in rs]
        changed = [v for v, lab in zip(l2, labels) if lab]
        unchanged = [v for v, lab in zip(l2, labels) if not lab]
        try:
            r_pb = stats.point_biserial(labels, l2)
        except StatsError:
            r_pb = None
        mean_c = _mean(changed) if changed else None
        mean_u = _mean(unchanged) if unchanged else None
        rows.append(
            BiserialRow(
                condition=label, n=len(rs), n_changed=sum(labels), r_pb=r_pb,
                mean_l2_changed=mean_c, mean_l2_unchanged=mean_u,
                ratio=(mean_c / mean_u) if mean_c is not None and mean_u else None,
            )
        )
    return tuple(rows)


def _ablation(
    records: Sequence[EvalRecord],
) -> tuple[tuple[AblationRow, ...], AblationAverages | None]:
    base = [r for r in records if r.defense == "none"]
    with_arm: dict[tuple[str, str], EvalRecord] = {}
    without_arm: dict[tuple[str, str], EvalRecord] = {}
    for r in base:
        (with_arm if r.with_coc else without_arm)[(r.clip_id, r.condition)] = r
    if not without_arm:
        return (), None
    conditions: dict[str, list[tuple[float, float]]] = {}
    reps: dict[str, EvalRecord] = {}
    for key, rw in sorted(with_arm.items()):
        ro = without_arm.get(key)
        if ro is None:
            continue
        conditions.setdefault(key[1], []).append((rw.ade_m, ro.ade_m))
        reps.setdefault(key[1], rw)
    rows: list[AblationRow] = []
    for label in sorted(conditions, key=lambda lb: condition_sort_key(reps[lb])):
        pairs = conditions[label]
        ade_with = _mean([p[0] for p in pairs])
        ade_without = _mean([p[1] for p in pairs])
        diffs = [p[1] - p[0] for p in pairs]
        delta = ade_without - ade_with
        dz = p_t = p_w = None
        try:
            test = stats.paired_t_test(diffs)
            p_t, dz = test.p_value, test.effect_size
        except StatsError:
            pass
        try:
            p_w = stats.wilcoxon_signed_rank(diffs).p_value
        except StatsError:
            pass
        rows.append(
            AblationRow(
                condition=label, n=len(pairs), ade_with=ade_with, ade_without=ade_without,
                delta=delta,
                pct_improvement=(100.0 * delta / ade_without) if ade_without > 0 else None,
                cohens_dz=dz, p_t=p_t, p_wilcoxon=p_w,
            )
        )
    if not rows:
        return (), None
    pcts = [r.pct_improvement for r in rows if r.pct_improvement is not None]
    dzs = [r.cohens_dz for r in rows if r.cohens_dz is not None]
    averages = AblationAverages(
        mean_ade_with=_mean([r.ade_with for r in rows]),
        mean_ade_without=_mean([r.ade_without for r in rows]),
        mean_delta=_mean([r.delta for r in rows]),
        mean_pct_improvement=_mean(pcts) if pcts else None,
        mean_cohens_dz=_mean(dzs) if dzs else None,
    )
    return tuple(rows), averages


def _defense_table(records: Sequence[EvalRecord]) -> tuple[DefenseRow, ...]:
    perturbed = [r for r in records if r.with_coc and r.kind != "clean"]
    defenses = sorted({r.defense for r in perturbed})
    if defenses == ["none"]:
        return ()
    conditions: list[str] = []
    seen = set()
    for r in sorted(perturbed, key=condition_sort_key):
        if r.condition not in seen:
            seen.add(r.condition)
            conditions.append(r.condition)
    table: dict[str, dict[str, float | None]] = {}
    for d in defenses:
        table[d] = {}
        for c in conditions:
            cell = [r.l2_deviation_m for r in perturbed if r.defense == d and r.condition == c]
            table[d][c] = _mean(cell) if cell else None
    rows: list[DefenseRow] = []
    none_row = table.get("none", {})
    for d in defenses:
        if d == "none":
            continue
        deltas = [
            table[d][c] - none_row[c]
            for c in conditions
            if table[d].get(c) is not None and none_row.get(c) is not None
        ]
        rows.append(
            DefenseRow(
                defense=d,
                mean_l2_by_condition=dict(table[d]),
                avg_delta_vs_none=_mean(deltas) if deltas else None,
            )
        )
    rows.insert(0, DefenseRow(defense="none", mean_l2_by_condition=dict(none_row), avg_delta_vs_none=None))
    return tuple(rows)


def severity_conditioned_defense(
    records: Sequence[EvalRecord], mild_max_m: float = 10.0, severe_min_m: float = 30.0
) -> dict[str, tuple[SeverityBucket, ...]]:
    """Per-bucket mean L2 delta (defended minus undefended), keyed by defense.

    Pairs (clip, condition) rows across defense on/off within the with-CoC
    arm; buckets by the undefended L2: mild < mild_max, severe > severe_min,
    middle between. The pooled view is stored under "all".
    """
    if not 0 < mild_max_m <= severe_min_m:
        raise AnalysisError(
            f"severity buckets overlap: mild_max={mild_max_m}, severe_min={severe_min_m}"
        )
    perturbed = [r for r in records if r.with_coc and r.kind != "clean"]
    undefended = {(r.clip_id, r.condition): r for r in perturbed if r.defense == "none"}
    pairs_by_defense: dict[str, list[tuple[float, float]]] = {}
    for r in sorted(perturbed, key=lambda rr: (rr.clip_id, rr.condition, rr.defense)):
        if r.defense == "none":
            continue
        base = undefended.get((r.clip_id, r.condition))
        if base is None:
            continue
        pairs_by_defense.setdefault(r.defense, []).append(
            (base.l2_deviation_m, r.l2_deviation_m)
        )
    if not pairs_by_defense:
        return {}

    def bucket_of(l2: float) -> str:
        if l2 < mild_max_m:
            return "mild"
        if l2 > severe_min_m:
            return "severe"
        return "middle"

    def summarize(pairs: list[tuple[float, float]]) -> tuple[SeverityBucket, ...]:
        buckets: dict[str, list[tuple[float, float]]] = {"mild": [], "middle": [], "severe": []}
        for before, after in pairs:
            buckets[bucket_of(before)].append((before, after))
        out = []
        for name in ("mild", "middle", "severe"):
            members = buckets[name]
            if members:
                mu = _mean([m[0] for m in members])
                md = _mean([m[1] for m in members])
                out.append(SeverityBucket(name, len(members), mu, md, md - mu))
            else:
                out.append(SeverityBucket(name, 0, None, None, None))
        return tuple(out)

    result = {d: summarize(pairs) for d, pairs in sorted(pairs_by_defense.items())}
    pooled = [p for pairs in pairs_by_defense.values() for p in pairs]
    result["all"] = summarize(pooled)
    return result


def _heatmap(attacked: Sequence[EvalRecord]) -> tuple[tuple[HeatmapCell, ...], dict[str, int]]:
    categories: dict[str, str] = {}
    for r in attacked:
        if r.clip_id not in categories:
            categories[r.clip_id] = classify_scenario(r.coc_clean)
    counts: dict[str, int] = {}
    for cat in categories.values():
        counts[cat] = counts.get(cat, 0) + 1
    cells: dict[tuple[str, str], list[float]] = {}
    reps: dict[str, EvalRecord] = {}
    for r in attacked:
        cells.setdefault((categories[r.clip_id], r.condition), []).append(r.delta_ade_m)
        reps.setdefault(r.condition, r)
    out = [
        HeatmapCell(category=cat, condition=cond, n=len(vals), mean_delta_ade=_mean(vals))
        for (cat, cond), vals in sorted(
            cells.items(), key=lambda kv: (kv[0][0], condition_sort_key(reps[kv[0][1]]))
        )
    ]
    return tuple(out), dict(sorted(counts.items()))


def _baseline(
    records: Sequence[EvalRecord], config: CampaignConfig
) -> BaselineComparison | None:
    clean = {r.clip_id: r for r in records if r.with_coc and r.kind == "clean" and r.defense == "none"}
    if not clean:
        return None
    try:
        clips = load_manifest(config.manifest)
    except ManifestError as exc:
        raise AnalysisError(f"baseline comparison needs the manifest: {exc}") from exc
    pairs: list[tuple[float, float]] = []
    for clip in clips:
        record = clean.get(clip.clip_id)
        if record is None:
            continue
        baseline_ade = ade_metric(constant_velocity_baseline(clip.ego_history), clip.gt_trajectory)
        pairs.append((baseline_ade, record.ade_m))
    if not pairs:
        return None
    base_mean = _mean([p[0] for p in pairs])
    model_mean = _mean([p[1] for p in pairs])
    t = p = None
    try:
        test = stats.paired_t_test([b - m for b, m in pairs])
        t, p = test.statistic, test.p_value
    except StatsError:
        pass
    return BaselineComparison(
        n=len(pairs),
        baseline_mean_ade=base_mean,
        model_mean_ade=model_mean,
        improvement_pct=(100.0 * (base_mean - model_mean) / base_mean) if base_mean > 0 else math.nan,
        t=t,
        p_value=p,
    )


def _failure_modes(attacked: Sequence[EvalRecord]) -> tuple[FailureModeStats, ...]:
    flipped = [r for r in attacked if r.coc_changed]
    if not flipped:
        return ()
    groups: dict[str, list[EvalRecord]] = {"aggregate": list(flipped)}
    for r in flipped:
        groups.setdefault(r.condition, []).append(r)
    reps = {r.condition: r for r in flipped}
    ordered = ["aggregate"] + sorted(
        (c for c in groups if c != "aggregate"), key=lambda lb: condition_sort_key(reps[lb])
    )
    out: list[FailureModeStats] = []
    for name in ordered:
        rs = groups[name]
        label_counts = {label: 0 for label in FAILURE_LABELS}
        either = 0
        for r in rs:
            mode = classify_failure(r.coc_clean, r.coc_perturbed)
            for label in mode.labels:
                label_counts[label] += 1
            if mode.labels & {"action_word_change", "object_reference_change"}:
                either += 1
        out.append(
            FailureModeStats(
                condition=name,
                n_flips=len(rs),
                fractions={k: v / len(rs) for k, v in label_counts.items()},
                action_or_object_rate=either / len(rs),
            )
        )
    return tuple(out)


def analyze(records: Sequence[EvalRecord], config: CampaignConfig) -> CampaignSummary:
    """Compute the full summary from records; see module docstring."""
    if not records:
        raise AnalysisError("no records to analyze")
    ordered = sorted(records, key=lambda r: (r.clip_id, r.condition, r.defense, not r.with_coc))
    primary = _primary_view(ordered)
    attacked = [r for r in primary if r.kind != "clean"]
    threshold = config.unsafe_threshold_m

    try:
        cross = cross_attack_consistency(ordered, threshold_m=threshold, k=3)
    except TaxonomyError:
        cross = None

    attack_rows = _attack_table(attacked, threshold)
    heatmap, category_counts = _heatmap(attacked)
    ablation_rows, ablation_avg = _ablation(ordered)
    return CampaignSummary(
        n_records=len(ordered),
        n_clips=len({r.clip_id for r in ordered}),
        seed=config.seed,
        unsafe_threshold_m=threshold,
        attack_table=attack_rows,
        dose_response=_dose_response(attacked, config.seed, config.bootstrap_resamples),
        partition=_partition(attacked),
        biserial=_biserial(attacked),
        monitor=monitor_report(attacked, threshold) if attacked else {},
        ablation=ablation_rows,
        ablation_averages=ablation_avg,
        defense_table=_defense_table(ordered),
        severity_defense=severity_conditioned_defense(
            ordered, config.mild_max_m, config.severe_min_m
        ),
        heatmap=heatmap,
        category_counts=category_counts,
        baseline=_baseline(ordered, config),
        cross_attack=cross,
        failure_modes=_failure_modes(attacked),
    )
