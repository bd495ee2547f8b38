"""Statistical engine: tests, effect sizes, resampling, regression, model selection.

Student-t p-values go through the regularized incomplete beta function,
evaluated by continued fraction (modified Lentz, tolerance 1e-12), so the
module has no dependency beyond numpy and agrees with the df=1 and df=2
closed forms. Nonlinear fits use Gauss-Newton with Levenberg damping.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_BETACF_TOL = 1e-12
_BETACF_MAX_ITER = 400
_GN_MAX_ITER = 200
_GN_TOL = 1e-10

FIT_FAMILIES = ("linear", "log_linear", "power_law", "saturating")


class StatsError(ValueError):
    """Invalid input to a statistical routine."""


class FitError(StatsError):
    """A model family could not be fit (non-convergence or invalid domain)."""


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    df: float | None = None
    effect_size: float | None = None
    method: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise StatsError(f"p_value out of [0, 1]: {self.p_value}")


@dataclass(frozen=True)
class FitResult:
    family: str
    params: tuple[float, ...]
    r_squared: float
    ss_res: float
    aic: float
    n: int

    def __post_init__(self) -> None:
        if self.family not in FIT_FAMILIES:
            raise StatsError(f"unknown fit family {self.family!r}")
        if self.r_squared > 1.0 + 1e-12:
            raise StatsError(f"r_squared > 1: {self.r_squared}")
        if self.n < len(self.params):
            raise StatsError(f"n={self.n} below parameter count {len(self.params)}")


def _as_float_array(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise StatsError(f"{name} contains non-finite values")
    return arr


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_TOL:
            return h
    raise StatsError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise StatsError(f"betainc_reg requires a, b > 0, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise StatsError(f"betainc_reg requires x in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    """CDF of Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise StatsError(f"df must be positive, got {df}")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * betainc_reg(df / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def student_t_two_sided_p(t: float, df: float) -> float:
    if df <= 0:
        raise StatsError(f"df must be positive, got {df}")
    if t == 0.0:
        return 1.0
    return min(1.0, betainc_reg(df / 2.0, 0.5, df / (df + t * t)))


def normal_sf(z: float) -> float:
    """Standard normal survival function."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def paired_t_test(diffs: Sequence[float]) -> TestResult:
    """Two-sided one-sample t-test on paired differences; effect size is d_z."""
    d = _as_float_array(diffs, "diffs")
    n = d.size
    if n < 2:
        raise StatsError(f"paired t-test needs n >= 2, got {n}")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise StatsError("paired t-test needs non-zero variance in diffs")
    mean = float(np.mean(d))
    t = mean / (sd / math.sqrt(n))
    return TestResult(
        statistic=t, p_value=student_t_two_sided_p(t, n - 1),
        df=float(n - 1), effect_size=mean / sd, method="paired_t",
    )


def two_sample_t(group0: Sequence[float], group1: Sequence[float], equal_var: bool = False) -> TestResult:
    """Two-sided two-sample t-test, Welch by default; effect size is pooled Cohen's d."""
    a = _as_float_array(group0, "group0")
    b = _as_float_array(group1, "group1")
    if a.size < 2 or b.size < 2:
        raise StatsError("two-sample t-test needs n >= 2 in each group")
    va, vb = float(np.var(a, ddof=1)), float(np.var(b, ddof=1))
    na, nb = a.size, b.size
    if va == 0.0 and vb == 0.0:
        raise StatsError("two-sample t-test needs non-zero variance")
    if equal_var:
        sp2 = ((na - 1) * va + (nb - 1) * vb) / (na + nb - 2)
        se = math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
        df = float(na + nb - 2)
    else:
        se = math.sqrt(va / na + vb / nb)
        df = (va / na + vb / nb) ** 2 / (
            (va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)
        )
    t = (float(np.mean(b)) - float(np.mean(a))) / se
    try:
        d = cohens_d(a, b)
    except StatsError:
        d = None
    return TestResult(
        statistic=t, p_value=student_t_two_sided_p(t, df), df=df,
        effect_size=d, method="pooled_t" if equal_var else "welch_t",
    )


def average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties shared as the average rank of the run."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _wilcoxon_exact_p(w_plus: float, ranks: np.ndarray) -> float:
    # DP over doubled ranks: average ranks are half-integers, so 2*rank is exact.
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    counts /= 2.0 ** len(doubled)
    w2 = int(round(2.0 * w_plus))
    p_le = float(counts[: w2 + 1].sum())
    p_ge = float(counts[w2:].sum())
    return min(1.0, 2.0 * min(p_le, p_ge))


def wilcoxon_signed_rank(diffs: Sequence[float], method: str = "auto") -> TestResult:
    """Two-sided Wilcoxon signed-rank test.

    Zeros are dropped first. Exact enumeration over sign assignments for
    n <= 12 (or method="exact"); otherwise a normal approximation with tie
    correction and continuity correction.
    """
    if method not in ("auto", "exact", "approx"):
        raise StatsError(f"unknown method {method!r}")
    d = _as_float_array(diffs, "diffs")
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        raise StatsError("wilcoxon: all diffs are zero")
    if n < 5:
        raise StatsError(f"wilcoxon needs n >= 5 after dropping zeros, got {n}")
    ranks = average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if method == "exact" or (method == "auto" and n <= 12):
        return TestResult(
            statistic=w_plus, p_value=_wilcoxon_exact_p(w_plus, ranks),
            effect_size=None, method="wilcoxon_exact",
        )
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var -= float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / 48.0
    if var <= 0:
        raise StatsError("wilcoxon: zero variance after tie correction")
    z = (abs(w_plus - mu) - 0.5) / math.sqrt(var)
    return TestResult(
        statistic=w_plus, p_value=min(1.0, 2.0 * normal_sf(z)),
        effect_size=None, method="wilcoxon_approx",
    )


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    a = _as_float_array(x, "x")
    b = _as_float_array(y, "y")
    if a.size != b.size:
        raise StatsError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 3:
        raise StatsError(f"pearson needs n >= 3, got {a.size}")
    ac = a - a.mean()
    bc = b - b.mean()
    denom = math.sqrt(float(ac @ ac) * float(bc @ bc))
    if denom == 0.0:
        raise StatsError("pearson requires non-constant inputs")
    return float(ac @ bc) / denom


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    a = _as_float_array(x, "x")
    b = _as_float_array(y, "y")
    if a.size != b.size:
        raise StatsError(f"length mismatch: {a.size} vs {b.size}")
    return pearson(average_ranks(a), average_ranks(b))


def point_biserial(labels: Sequence[int], y: Sequence[float]) -> float:
    """Pearson correlation with the binary labels coded 0/1."""
    lab = np.asarray(labels)
    vals = set(np.unique(lab).tolist())
    if not vals <= {0, 1, False, True}:
        raise StatsError(f"labels must be binary 0/1, got values {sorted(vals)}")
    return pearson(lab.astype(np.float64), y)


def cohens_d(group0: Sequence[float], group1: Sequence[float]) -> float:
    """Standardized mean difference with df-weighted pooled sample variance."""
    a = _as_float_array(group0, "group0")
    b = _as_float_array(group1, "group1")
    if a.size < 2 or b.size < 2:
        raise StatsError("cohens_d needs n >= 2 in each group")
    sp2 = ((a.size - 1) * np.var(a, ddof=1) + (b.size - 1) * np.var(b, ddof=1)) / (
        a.size + b.size - 2
    )
    if sp2 == 0.0:
        raise StatsError("cohens_d needs non-zero pooled variance")
    return float((b.mean() - a.mean()) / math.sqrt(sp2))


def cohens_dz(diffs: Sequence[float]) -> float:
    d = _as_float_array(diffs, "diffs")
    if d.size < 2:
        raise StatsError("cohens_dz needs n >= 2")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise StatsError("cohens_dz needs non-zero variance")
    return float(d.mean() / sd)


def _bootstrap_key(seed: int, chunk_index: int) -> int:
    digest = hashlib.sha256(f"bootstrap|{seed}|{chunk_index}".encode()).digest()
    return int.from_bytes(digest[:16], "big")


def bootstrap_ci(
    values: Sequence[float],
    statistic: str | Callable[[np.ndarray], float] = "mean",
    b: int = 10000,
    seed: int = 0,
    alpha: float = 0.05,
    chunk_size: int = 1000,
) -> tuple[float, float]:
    """Percentile bootstrap CI, deterministic under a fixed seed.

    Resampling runs in fixed-size chunks, each drawing from its own
    counter-based substream keyed by (seed, chunk index), so the interval is
    independent of how chunks are scheduled.
    """
    data = _as_float_array(values, "values")
    if data.size == 0:
        raise StatsError("bootstrap_ci needs non-empty values")
    if b < 1:
        raise StatsError(f"bootstrap_ci needs b >= 1, got {b}")
    if not 0.0 < alpha < 1.0:
        raise StatsError(f"alpha must be in (0, 1), got {alpha}")
    stats = np.empty(b, dtype=np.float64)
    pos = 0
    for chunk_index in range(math.ceil(b / chunk_size)):
        count = min(chunk_size, b - pos)
        rng = np.random.Generator(np.random.Philox(key=_bootstrap_key(seed, chunk_index)))
        idx = rng.integers(0, data.size, size=(count, data.size))
        if statistic == "mean":
            stats[pos : pos + count] = data[idx].mean(axis=1)
        elif statistic == "median":
            stats[pos : pos + count] = np.median(data[idx], axis=1)
        elif callable(statistic):
            resampled = data[idx]
            stats[pos : pos + count] = [statistic(row) for row in resampled]
        else:
            raise StatsError(f"unknown statistic {statistic!r}")
        pos += count
    lo, hi = np.percentile(stats, [100.0 * alpha / 2.0, 100.0 * (1.0 - alpha / 2.0)])
    return (float(lo), float(hi))


def aic_from_ss(n: int, ss_res: float, k: int) -> float:
    """AIC = n * ln(SSres / n) + 2k; an exact fit gets -inf."""
    if ss_res <= 0.0:
        return -math.inf
    return n * math.log(ss_res / n) + 2 * k


def _r_squared(y: np.ndarray, ss_res: float) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -math.inf
    return 1.0 - ss_res / ss_tot


def ols_fit(x: Sequence[float], y: Sequence[float]) -> FitResult:
    """Least-squares line fit; params are (intercept, slope)."""
    xa = _as_float_array(x, "x")
    ya = _as_float_array(y, "y")
    if xa.size != ya.size:
        raise StatsError(f"length mismatch: {xa.size} vs {ya.size}")
    if xa.size < 3:
        raise StatsError(f"ols_fit needs n >= 3, got {xa.size}")
    xc = xa - xa.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise StatsError("ols_fit requires non-constant x")
    slope = float(xc @ (ya - ya.mean())) / sxx
    intercept = float(ya.mean() - slope * xa.mean())
    residuals = ya - (intercept + slope * xa)
    ss_res = float(residuals @ residuals)
    return FitResult(
        family="linear", params=(intercept, slope),
        r_squared=_r_squared(ya, ss_res), ss_res=ss_res,
        aic=aic_from_ss(xa.size, ss_res, 2), n=int(xa.size),
    )


def ols_slope_test(x: Sequence[float], y: Sequence[float]) -> TestResult:
    """t-test of the OLS slope against zero, df = n - 2."""
    xa = _as_float_array(x, "x")
    ya = _as_float_array(y, "y")
    fit = ols_fit(xa, ya)
    n = xa.size
    xc = xa - xa.mean()
    sxx = float(xc @ xc)
    mse = fit.ss_res / (n - 2)
    if mse == 0.0:
        return TestResult(statistic=math.inf, p_value=0.0, df=float(n - 2), method="ols_slope_t")
    se = math.sqrt(mse / sxx)
    t = fit.params[1] / se
    return TestResult(
        statistic=t, p_value=student_t_two_sided_p(t, n - 2),
        df=float(n - 2), method="ols_slope_t",
    )


def _gauss_newton(
    y: np.ndarray,
    model: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    theta0: np.ndarray,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    theta = theta0.astype(np.float64).copy()
    if project is not None:
        theta = project(theta)
    resid = y - model(theta)
    ss = float(resid @ resid)
    lam = 1e-3
    for _ in range(_GN_MAX_ITER):
        jac = jacobian(theta)
        jtj = jac.T @ jac
        jtr = jac.T @ resid
        stepped = False
        for _ in range(30):
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(jtj.shape[0]), jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta + delta
            if project is not None:
                trial = project(trial)
            trial_resid = y - model(trial)
            if not np.all(np.isfinite(trial_resid)):
                lam *= 10.0
                continue
            trial_ss = float(trial_resid @ trial_resid)
            if trial_ss <= ss:
                improvement = ss - trial_ss
                theta, resid, ss = trial, trial_resid, trial_ss
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                if improvement <= _GN_TOL * max(ss, 1e-300):
                    return theta
                break
            lam *= 10.0
        if not stepped:
            return theta
    return theta


def fit_family(x: Sequence[float], y: Sequence[float], family: str) -> FitResult:
    """Fit one dose-response family.

    linear      y = a + b x
    log_linear  y = a + b ln x          (x > 0)
    power_law   y = a x^b               (x > 0; init from log-log OLS)
    saturating  y = c + a (1 - e^(-bx)) with b > 0 (grid-initialized over b)
    """
    xa = _as_float_array(x, "x")
    ya = _as_float_array(y, "y")
    if xa.size != ya.size:
        raise StatsError(f"length mismatch: {xa.size} vs {ya.size}")
    if family == "linear":
        return ols_fit(xa, ya)
    if family == "log_linear":
        if np.any(xa <= 0):
            raise FitError("log_linear requires x > 0")
        if xa.size < 3:
            raise FitError(f"log_linear needs n >= 3, got {xa.size}")
        base = ols_fit(np.log(xa), ya)
        return FitResult(
            family="log_linear", params=base.params, r_squared=_r_squared(ya, base.ss_res),
            ss_res=base.ss_res, aic=base.aic, n=base.n,
        )
    if family == "power_law":
        if np.any(xa <= 0):
            raise FitError("power_law requires x > 0")
        if np.any(ya <= 0):
            raise FitError("power_law initialization requires y > 0")
        if xa.size < 3:
            raise FitError(f"power_law needs n >= 3, got {xa.size}")
        loglog = ols_fit(np.log(xa), np.log(ya))
        theta0 = np.array([math.exp(loglog.params[0]), loglog.params[1]])

        def model(th: np.ndarray) -> np.ndarray:
            return th[0] * np.power(xa, th[1])

        def jac(th: np.ndarray) -> np.ndarray:
            xb = np.power(xa, th[1])
            return np.column_stack([xb, th[0] * xb * np.log(xa)])

        theta = _gauss_newton(ya, model, jac, theta0)
        resid = ya - model(theta)
        ss = float(resid @ resid)
        if not np.isfinite(ss):
            raise FitError("power_law fit diverged")
        return FitResult(
            family="power_law", params=tuple(float(t) for t in theta),
            r_squared=_r_squared(ya, ss), ss_res=ss,
            aic=aic_from_ss(xa.size, ss, 2), n=int(xa.size),
        )
    if family == "saturating":
        if xa.size < 4:
            raise FitError(f"saturating needs n >= 4, got {xa.size}")

        def basis_fit(b: float) -> tuple[float, float, float]:
            g = 1.0 - np.exp(-b * xa)
            design = np.column_stack([np.ones_like(xa), g])
            coef, _, _, _ = np.linalg.lstsq(design, ya, rcond=None)
            resid = ya - design @ coef
            return float(coef[0]), float(coef[1]), float(resid @ resid)

        best = None
        for b in np.geomspace(1e-6, 2.0, 80):
            c0, a0, ss0 = basis_fit(float(b))
            if best is None or ss0 < best[3]:
                best = (c0, a0, float(b), ss0)
        theta0 = np.array(best[:3])

        def model(th: np.ndarray) -> np.ndarray:
            return th[0] + th[1] * (1.0 - np.exp(-th[2] * xa))

        def jac(th: np.ndarray) -> np.ndarray:
            e = np.exp(-th[2] * xa)
            return np.column_stack([np.ones_like(xa), 1.0 - e, th[1] * xa * e])

        def project(th: np.ndarray) -> np.ndarray:
            # b > 0 keeps the family saturating rather than exponential growth
            out = th.copy()
            out[2] = max(out[2], 1e-9)
            return out

        theta = _gauss_newton(ya, model, jac, theta0, project=project)
        resid = ya - model(theta)
        ss = float(resid @ resid)
        if not np.isfinite(ss):
            raise FitError("saturating fit diverged")
        return FitResult(
            family="saturating", params=tuple(float(t) for t in theta),
            r_squared=_r_squared(ya, ss), ss_res=ss,
            aic=aic_from_ss(xa.size, ss, 3), n=int(xa.size),
        )
    raise StatsError(f"unknown fit family {family!r}; expected one of {FIT_FAMILIES}")


def fit_all_families(
    x: Sequence[float], y: Sequence[float]
) -> tuple[dict[str, FitResult], dict[str, str]]:
    """Fit every family; families that fail are excluded with a diagnostic."""
    fits: dict[str, FitResult] = {}
    failures: dict[str, str] = {}
    for family in FIT_FAMILIES:
        try:
            fits[family] = fit_family(x, y, family)
        except FitError as exc:
            failures[family] = str(exc)
    return fits, failures


def aic_compare(fits: Sequence[FitResult]) -> list[tuple[str, float, float]]:
    """Rank fits by AIC ascending; returns (family, aic, delta_aic_vs_best)."""
    if not fits:
        raise StatsError("aic_compare needs at least one fit")
    ranked = sorted(fits, key=lambda f: f.aic)
    best = ranked[0].aic
    out = []
    for f in ranked:
        delta = f.aic - best
        if math.isinf(best) and math.isinf(f.aic):
            delta = 0.0
        out.append((f.family, f.aic, delta))
    return out


def bonferroni(p_values: Sequence[float], alpha: float = 0.05) -> tuple[list[float], list[bool]]:
    """Bonferroni adjustment: p * m capped at 1; significant iff adjusted < alpha."""
    m = len(p_values)
    if m == 0:
        raise StatsError("bonferroni needs at least one p-value")
    adjusted = [min(1.0, p * m) for p in p_values]
    return adjusted, [p < alpha for p in adjusted]
