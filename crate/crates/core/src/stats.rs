//! Estimators and hypothesis tests for extremal configurations.

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::bbm_sim::SQRT2;
use crate::error::{LabError, Result};
use crate::martingale::CompensatedSum;
use crate::point_process::sample_exponential_ppp;
use crate::rng::{derive_seed, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    TailFit,
    FkppTail,
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedConstant {
    pub c_hat: f64,
    pub stderr: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub method: FitMethod,
}

/// Tail fit of `P[max > x] ≈ C x e^{−√2 x}` on `grid`.
///
/// `log C` is the inverse-variance weighted mean of
/// `log P̂(max > x_j) − log(x_j e^{−√2 x_j})`. The standard error uses the
/// full multinomial covariance of the empirical tail at the grid points.
pub fn estimate_c_on_grid(maxima: &[f64], grid: &[f64]) -> Result<EstimatedConstant> {
    if grid.len() < 2 || grid.iter().any(|&x| x <= 0.0) {
        return Err(LabError::InvalidParameter(
            "fit grid needs at least two positive points".into(),
        ));
    }
    let n = maxima.len() as f64;
    let mut sorted = maxima.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = |x: f64| (sorted.len() - sorted.partition_point(|&m| m <= x)) as f64 / n;
    let p: Vec<f64> = grid.iter().map(|&x| tail(x)).collect();
    if let Some(j) = p.iter().position(|&v| v == 0.0) {
        return Err(LabError::EmptyTail(format!(
            "no maximum above x = {} among {} records",
            grid[j],
            maxima.len()
        )));
    }
    // Var(log p̂) ≈ (1 − p)/(n p).
    let w: Vec<f64> = p.iter().map(|&v| n * v / (1.0 - v).max(1e-12)).collect();
    let wsum: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|&v| v / wsum).collect();
    let log_c: f64 = grid
        .iter()
        .zip(&p)
        .zip(&w)
        .map(|((&x, &pj), &wj)| wj * (pj.ln() - x.ln() + SQRT2 * x))
        .sum();
    // Cov(p̂_j, p̂_k) = (p_max(j,k) − p_j p_k)/n for the nested events.
    let mut var = 0.0;
    for j in 0..grid.len() {
        for k in 0..grid.len() {
            let joint = if grid[j] >= grid[k] { p[j] } else { p[k] };
            var += w[j] * w[k] * (joint - p[j] * p[k]) / (n * p[j] * p[k]);
        }
    }
    let c_hat = log_c.exp();
    Ok(EstimatedConstant {
        c_hat,
        stderr: c_hat * var.max(0.0).sqrt(),
        x_lo: grid[0],
        x_hi: grid[grid.len() - 1],
        method: FitMethod::TailFit,
    })
}

/// Tail fit on `points` equally spaced values of `[x_lo, x_hi]`.
pub fn estimate_c(maxima: &[f64], x_lo: f64, x_hi: f64, points: usize) -> Result<EstimatedConstant> {
    if !(x_hi > x_lo) {
        return Err(LabError::InvalidParameter(format!(
            "degenerate fit window [{x_lo}, {x_hi}]"
        )));
    }
    let grid: Vec<f64> = (0..points)
        .map(|i| x_lo + (x_hi - x_lo) * i as f64 / (points - 1) as f64)
        .collect();
    estimate_c_on_grid(maxima, &grid)
}

/// Conditional maximum likelihood scale: counts above `y` treated as
/// Poisson with mean `C Z e^{−√2 y}`. Runs with `Z <= 0` are skipped.
pub fn conditional_scale(zs: &[f64], counts: &[usize], y: f64) -> Result<EstimatedConstant> {
    let mut n_sum = 0.0;
    let mut z_sum = 0.0;
    for (&z, &c) in zs.iter().zip(counts) {
        if z > 0.0 {
            n_sum += c as f64;
            z_sum += z;
        }
    }
    if n_sum == 0.0 {
        return Err(LabError::EmptyTail(format!("no point above y = {y}")));
    }
    let c_hat = n_sum / (z_sum * (-SQRT2 * y).exp());
    Ok(EstimatedConstant {
        c_hat,
        stderr: c_hat / n_sum.sqrt(),
        x_lo: y,
        x_hi: f64::INFINITY,
        method: FitMethod::Conditional,
    })
}

/// `u_i = λ e^{−√2 x_i}`.
pub fn homogenize(points: &[f64], lambda: f64) -> Vec<f64> {
    points.iter().map(|&x| lambda * (-SQRT2 * x).exp()).collect()
}

/// Successive differences of `0, u_1, u_2, …` for the first `k` values.
pub fn spacings(u: &[f64], k: usize) -> Vec<f64> {
    let mut prev = 0.0;
    u.iter()
        .take(k)
        .map(|&v| {
            let s = v - prev;
            prev = v;
            s
        })
        .collect()
}

/// Asymptotic Kolmogorov survival function `P[K > x]`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, effective_n: f64) -> f64 {
    let sn = effective_n.sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<KsResult> {
    if sample.is_empty() {
        return Err(LabError::InsufficientPoints("empty KS sample".into()));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
        n: x.len(),
    })
}

pub fn ks_exponential(sample: &[f64]) -> Result<KsResult> {
    ks_one_sample(sample, |v| if v <= 0.0 { 0.0 } else { -(-v).exp_m1() })
}

pub fn ks_uniform(sample: &[f64]) -> Result<KsResult> {
    ks_one_sample(sample, |v| v.clamp(0.0, 1.0))
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(LabError::InsufficientPoints("empty KS sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, na * nb / (na + nb)),
        n: a.len() + b.len(),
    })
}

/// Pearson dispersion `Σ (N_i − μ_i)² / Σ μ_i`; 1 for Poisson counts.
pub fn dispersion_index(counts: &[usize], means: &[f64]) -> Result<f64> {
    if counts.len() != means.len() || counts.is_empty() {
        return Err(LabError::SizeMismatch(format!(
            "{} counts, {} means",
            counts.len(),
            means.len()
        )));
    }
    let mut num = CompensatedSum::default();
    let mut den = CompensatedSum::default();
    for (&c, &m) in counts.iter().zip(means) {
        num.add((c as f64 - m).powi(2));
        den.add(m);
    }
    Ok(num.value() / den.value())
}

/// Variance over mean of raw counts.
pub fn variance_to_mean(counts: &[usize]) -> f64 {
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var / mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub passed: bool,
    pub sample_sizes: Vec<(String, usize)>,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl TestReport {
    pub fn new(name: &str, statistic: f64, p_value: Option<f64>, passed: bool) -> Self {
        Self {
            name: name.to_string(),
            statistic,
            p_value,
            passed,
            sample_sizes: Vec::new(),
            config_hash: String::new(),
            notes: Vec::new(),
        }
    }

    pub fn with_size(mut self, what: &str, n: usize) -> Self {
        self.sample_sizes.push((what.to_string(), n));
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn text_line(&self) -> String {
        let p = self
            .p_value
            .map(|p| format!(" p={p:.4e}"))
            .unwrap_or_default();
        let sizes: Vec<String> = self
            .sample_sizes
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        format!(
            "[{}] {} stat={:.6}{} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            p,
            sizes.join(" ")
        )
    }
}

/// Text rendering of a report list, one line per test plus notes.
pub fn render_reports(reports: &[TestReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&r.text_line());
        out.push('\n');
        for n in &r.notes {
            out.push_str("    ");
            out.push_str(n);
            out.push('\n');
        }
    }
    out
}

/// One run's thinned points (decreasing) and its `Z(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinnedRun {
    pub z: f64,
    pub points: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    pub c_hat: f64,
    pub k: usize,
    pub y: f64,
    /// Runs with `Z(t)` at or below this are excluded.
    pub z_floor: f64,
    pub ks_alpha: f64,
    pub dispersion_range: (f64, f64),
}

impl SuiteParams {
    pub fn new(c_hat: f64) -> Self {
        Self {
            c_hat,
            k: 5,
            y: -1.0,
            z_floor: 1e-300,
            ks_alpha: 0.01,
            dispersion_range: (0.85, 1.15),
        }
    }
}

/// KS on pooled homogenized top-`k` spacings and the dispersion index of
/// counts above `y`.
pub fn poissonianity_suite(runs: &[ThinnedRun], params: &SuiteParams) -> Result<Vec<TestReport>> {
    if params.k == 0 || params.k > 10 {
        return Err(LabError::InvalidParameter(format!("k = {} must be in 1..=10", params.k)));
    }
    let mut pooled = Vec::new();
    let mut counts = Vec::new();
    let mut means = Vec::new();
    let mut excluded_z = 0;
    let mut short = 0;
    for run in runs {
        if !(run.z > params.z_floor) {
            excluded_z += 1;
            continue;
        }
        let lambda = params.c_hat * run.z;
        counts.push(run.points.iter().take_while(|&&x| x > params.y).count());
        means.push(lambda * (-SQRT2 * params.y).exp());
        if run.points.len() < params.k {
            short += 1;
            continue;
        }
        pooled.extend(spacings(&homogenize(&run.points, lambda), params.k));
    }
    let ks = ks_exponential(&pooled)?;
    let disp = dispersion_index(&counts, &means)?;
    let (lo, hi) = params.dispersion_range;
    Ok(vec![
        TestReport::new(
            "poisson-spacings-ks",
            ks.statistic,
            Some(ks.p_value),
            ks.p_value > params.ks_alpha,
        )
        .with_size("spacings", ks.n)
        .with_size("runs", runs.len())
        .with_size("excluded_z", excluded_z)
        .with_size("short_runs", short),
        TestReport::new("count-dispersion", disp, None, disp >= lo && disp <= hi)
            .with_size("runs", counts.len())
            .with_size("excluded_z", excluded_z),
    ])
}

/// Direct PPP draws with the runs' `λ = c_hat Z`, deep enough for `k`
/// spacings and the count level.
pub fn ppp_control_runs(runs: &[ThinnedRun], c_hat: f64, y: f64, seed: u64) -> Result<Vec<ThinnedRun>> {
    runs.iter()
        .enumerate()
        .filter(|(_, r)| r.z > 0.0)
        .map(|(i, r)| {
            let lambda = c_hat * r.z;
            // Window with mean 60 points, and never above y.
            let low = ((lambda / 60.0).ln() / SQRT2).min(y);
            let s = sample_exponential_ppp(lambda, low, derive_seed(seed, "ppp-control", i as u64))?;
            Ok(ThinnedRun {
                z: r.z,
                points: s.points,
            })
        })
        .collect()
}

/// Deterministic lattice with spacing 1/2 below each run's top point.
pub fn lattice_control_runs(runs: &[ThinnedRun]) -> Vec<ThinnedRun> {
    runs.iter()
        .map(|r| {
            let top = r.points.first().copied().unwrap_or(0.0);
            ThinnedRun {
                z: r.z,
                points: (0..40).map(|j| top - 0.5 * j as f64).collect(),
            }
        })
        .collect()
}

/// Thinning of the union of two independent configurations when every
/// cross overlap is 0: the sorted union of the two thinned sets.
pub fn merge_thinned(a: &ThinnedRun, b: &ThinnedRun) -> ThinnedRun {
    let mut points: Vec<f64> = a.points.iter().chain(&b.points).copied().collect();
    points.sort_by(|x, y| y.total_cmp(x));
    ThinnedRun {
        z: a.z + b.z,
        points,
    }
}

fn pooled_spacings(runs: &[ThinnedRun], c_hat: f64, k: usize) -> Vec<f64> {
    runs.iter()
        .filter(|r| r.z > 0.0 && r.points.len() >= k)
        .flat_map(|r| spacings(&homogenize(&r.points, c_hat * r.z), k))
        .collect()
}

/// Two-sample KS between merged-pair and single-run homogenized spacings.
pub fn superposition_test(
    pairs: &[(ThinnedRun, ThinnedRun)],
    singles: &[ThinnedRun],
    c_hat: f64,
    k: usize,
    alpha: f64,
) -> Result<TestReport> {
    let merged: Vec<ThinnedRun> = pairs.iter().map(|(a, b)| merge_thinned(a, b)).collect();
    let a = pooled_spacings(&merged, c_hat, k);
    let b = pooled_spacings(singles, c_hat, k);
    let ks = ks_two_sample(&a, &b)?;
    Ok(
        TestReport::new("superposition-ks2", ks.statistic, Some(ks.p_value), ks.p_value > alpha)
            .with_size("pairs", pairs.len())
            .with_size("singles", singles.len()),
    )
}

/// A step function `Σ a_i 1_{[lo_i, hi_i)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub steps: Vec<(f64, f64, f64)>,
}

impl StepFunction {
    pub fn new(steps: Vec<(f64, f64, f64)>) -> Result<Self> {
        for &(lo, hi, a) in &steps {
            if !(a >= 0.0) || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(LabError::InvalidParameter(format!(
                    "step [{lo}, {hi}) with weight {a}: weights must be nonnegative, supports bounded"
                )));
            }
        }
        Ok(Self { steps })
    }

    pub fn zero() -> Self {
        Self { steps: Vec::new() }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.steps
            .iter()
            .filter(|&&(lo, hi, _)| x >= lo && x < hi)
            .map(|&(_, _, a)| a)
            .sum()
    }

    /// `∫ (1 − e^{−φ}) √2 e^{−√2 x} dx`, assuming disjoint steps.
    pub fn exponential_integral(&self) -> f64 {
        self.steps
            .iter()
            .map(|&(lo, hi, a)| -(-a).exp_m1() * ((-SQRT2 * lo).exp() - (-SQRT2 * hi).exp()))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceComparison {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_difference: f64,
    pub lhs_interval: (f64, f64),
    pub rhs_interval: (f64, f64),
    pub runs: usize,
    pub excluded_z: usize,
}

impl LaplaceComparison {
    pub fn intervals_overlap(&self) -> bool {
        self.lhs_interval.0 <= self.rhs_interval.1 && self.rhs_interval.0 <= self.lhs_interval.1
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().copied().collect::<CompensatedSum>().value() / v.len() as f64
}

/// Empirical `E[exp(−Σ φ(x_i))]` against `E[exp(−c_hat Z ∫(1 − e^{−φ}) √2 e^{−√2x} dx)]`
/// with percentile bootstrap intervals.
pub fn laplace_functional_compare(
    runs: &[ThinnedRun],
    phi: &StepFunction,
    c_hat: f64,
    bootstrap: usize,
    seed: u64,
) -> Result<LaplaceComparison> {
    let integral = phi.exponential_integral();
    let kept: Vec<&ThinnedRun> = runs.iter().filter(|r| r.z > 0.0).collect();
    if kept.is_empty() {
        return Err(LabError::InsufficientPoints("no run with positive Z".into()));
    }
    let left: Vec<f64> = kept
        .iter()
        .map(|r| (-r.points.iter().map(|&x| phi.eval(x)).sum::<f64>()).exp())
        .collect();
    let right: Vec<f64> = kept.iter().map(|r| (-c_hat * r.z * integral).exp()).collect();
    let (lhs, rhs) = (mean(&left), mean(&right));
    let n = kept.len();
    let mut rng = StreamRng::new(derive_seed(seed, "laplace-bootstrap", 0));
    let mut lb = Vec::with_capacity(bootstrap);
    let mut rb = Vec::with_capacity(bootstrap);
    for _ in 0..bootstrap {
        let (mut sl, mut sr) = (CompensatedSum::default(), CompensatedSum::default());
        for _ in 0..n {
            let i = (rng.next_u64() % n as u64) as usize;
            sl.add(left[i]);
            sr.add(right[i]);
        }
        lb.push(sl.value() / n as f64);
        rb.push(sr.value() / n as f64);
    }
    Ok(LaplaceComparison {
        lhs,
        rhs,
        relative_difference: if lhs == rhs { 0.0 } else { (lhs - rhs).abs() / rhs.abs() },
        lhs_interval: percentile_interval(&mut lb, lhs),
        rhs_interval: percentile_interval(&mut rb, rhs),
        runs: n,
        excluded_z: runs.len() - n,
    })
}

fn percentile_interval(v: &mut [f64], point: f64) -> (f64, f64) {
    if v.is_empty() {
        return (point, point);
    }
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
    (at(0.025), at(0.975))
}

/// Mean of `x_n − x_{n+1}` over configurations, `n = 1..=n_max` (1-based
/// ranks).
pub fn rank_gap_profile(configs: &[Vec<f64>], n_max: usize) -> Result<Vec<(usize, f64)>> {
    if configs.is_empty() {
        return Err(LabError::InsufficientPoints("no configurations".into()));
    }
    if let Some(c) = configs.iter().find(|c| c.len() < n_max + 1) {
        return Err(LabError::InsufficientPoints(format!(
            "configuration with {} points, need {}",
            c.len(),
            n_max + 1
        )));
    }
    Ok((1..=n_max)
        .map(|n| {
            let gaps: Vec<f64> = configs.iter().map(|c| c[n - 1] - c[n]).collect();
            (n, mean(&gaps))
        })
        .collect())
}

/// `(Y + 1)² e^{−√2 Y}`.
pub fn tail_bound_shape(y: f64) -> f64 {
    (y + 1.0).powi(2) * (-SQRT2 * y).exp()
}

/// Empirical `P[max > Y]` for each `Y`.
pub fn empirical_tail(maxima: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = maxima.len() as f64;
    ys.iter()
        .map(|&y| maxima.iter().filter(|&&m| m > y).count() as f64 / n)
        .collect()
}

/// Smallest `κ` with `P̂[max > Y] <= κ (Y+1)² e^{−√2Y}` on the fit grid.
pub fn fit_tail_kappa(maxima: &[f64], fit_grid: &[f64]) -> f64 {
    empirical_tail(maxima, fit_grid)
        .iter()
        .zip(fit_grid)
        .map(|(&p, &y)| p / tail_bound_shape(y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp1};

    /// Draws with `P[max > x] = min(1, c0 x e^{−√2 x})` for x above the mode.
    fn synthetic_maxima(c0: f64, n: usize, seed: u64) -> Vec<f64> {
        let tail = |x: f64| (c0 * x * (-SQRT2 * x).exp()).min(1.0);
        // The tail is decreasing for x > 1/√2; below that, pin to the
        // point where it equals 1 (or 1/√2).
        let x_star = {
            let (mut lo, mut hi) = (1.0 / SQRT2, 50.0);
            if tail(lo) < 1.0 {
                lo
            } else {
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if tail(mid) >= 1.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        };
        let mut rng = StreamRng::new(seed);
        (0..n)
            .map(|_| {
                let u = rng.open01();
                if u >= tail(x_star) {
                    return x_star - 1.0;
                }
                let (mut lo, mut hi) = (x_star, 60.0);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if tail(mid) > u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }

    #[test]
    fn synthetic_constant_recovered() {
        let m = synthetic_maxima(1.0, 20_000, 4);
        let est = estimate_c(&m, 1.0, 3.0, 9).unwrap();
        assert!((est.c_hat - 1.0).abs() < 3.0 * est.stderr, "{est:?}");
        assert!(est.stderr < 0.1);
        let shifted = estimate_c(&m, 2.0, 4.0, 9).unwrap();
        assert!((shifted.c_hat / est.c_hat - 1.0).abs() < 0.2);
    }

    #[test]
    fn stderr_is_calibrated() {
        let reps = 60;
        let mut z = Vec::new();
        for s in 0..reps {
            let e = estimate_c(&synthetic_maxima(1.0, 4000, 100 + s), 1.0, 3.0, 9).unwrap();
            z.push((e.c_hat - 1.0) / e.stderr);
        }
        let sd = (z.iter().map(|v| v * v).sum::<f64>() / reps as f64).sqrt();
        assert!(sd > 0.6 && sd < 1.5, "sd of standardized errors {sd}");
    }

    #[test]
    fn empty_tail_rejected() {
        assert!(matches!(
            estimate_c(&[0.0, 0.1, 0.2], 1.0, 3.0, 5),
            Err(LabError::EmptyTail(_))
        ));
        assert!(estimate_c(&[0.0], 1.0, 1.0, 5).is_err());
    }

    #[test]
    fn homogenize_basics() {
        assert_eq!(homogenize(&[0.0], 1.0), vec![1.0]);
        let u = homogenize(&[2.0, 1.0, -1.0], 0.7);
        assert!(u.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ppp_spacings_are_exponential() {
        let mut pooled = Vec::new();
        for s in 0..2000 {
            let lambda = 0.2 + (s % 7) as f64 * 0.3;
            let p = sample_exponential_ppp(lambda, -3.0, s).unwrap();
            pooled.extend(spacings(&homogenize(&p.points, lambda), 5).into_iter());
        }
        let ks = ks_exponential(&pooled).unwrap();
        assert!(ks.p_value > 0.001, "{ks:?}");
    }

    #[test]
    fn ppp_points_uniform_after_mapping() {
        let mut pooled = Vec::new();
        for s in 0..500 {
            let p = sample_exponential_ppp(2.0, -1.0, s).unwrap();
            let total = 2.0 * SQRT2.exp();
            pooled.extend(homogenize(&p.points, 2.0).iter().map(|u| u / total));
        }
        assert!(ks_uniform(&pooled).unwrap().p_value > 0.001);
    }

    #[test]
    fn ppp_counts_in_disjoint_windows_uncorrelated() {
        let n = 2000;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for s in 0..n {
            let p = sample_exponential_ppp(3.0, 0.0, s).unwrap();
            a.push(p.points.iter().filter(|&&x| x < 1.0).count() as f64);
            b.push(p.points.iter().filter(|&&x| (1.0..2.0).contains(&x)).count() as f64);
        }
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n as f64;
        let se = (ma * mb / n as f64).sqrt();
        assert!(cov.abs() < 3.0 * se, "cov {cov} se {se}");
    }

    #[test]
    fn ppp_dispersion_near_one() {
        let counts: Vec<usize> = (0..2000)
            .map(|s| sample_exponential_ppp(1.0, -1.0, s).unwrap().points.len())
            .collect();
        let d = variance_to_mean(&counts);
        assert!((0.85..=1.15).contains(&d), "{d}");
    }

    #[test]
    fn kolmogorov_values() {
        // Reference values of the asymptotic distribution.
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_sf(1.0) - 0.2700).abs() < 1e-3);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn ks_detects_wrong_law() {
        let mut rng = StreamRng::new(3);
        let x: Vec<f64> = (0..2000).map(|_| Exp1.sample(&mut rng)).collect();
        assert!(ks_exponential(&x).unwrap().p_value > 0.001);
        let y: Vec<f64> = x.iter().map(|v| v * 1.5).collect();
        assert!(ks_exponential(&y).unwrap().p_value < 1e-6);
        assert!(ks_two_sample(&x, &y).unwrap().p_value < 1e-6);
        assert!(ks_two_sample(&x[..1000], &x[1000..]).unwrap().p_value > 0.001);
    }

    fn fake_runs(n: usize) -> Vec<ThinnedRun> {
        (0..n)
            .map(|i| ThinnedRun {
                z: 0.1 + (i % 13) as f64 * 0.05,
                points: vec![0.0],
            })
            .collect()
    }

    #[test]
    fn suite_controls() {
        let base = fake_runs(2000);
        let ppp = ppp_control_runs(&base, 0.5, -1.0, 9).unwrap();
        let reports = poissonianity_suite(&ppp, &SuiteParams::new(0.5)).unwrap();
        assert!(reports.iter().all(|r| r.passed), "{}", render_reports(&reports));
        let lattice = lattice_control_runs(&base);
        let reports = poissonianity_suite(&lattice, &SuiteParams::new(0.5)).unwrap();
        assert!(reports[0].p_value.unwrap() < 1e-6);
        assert!(!reports[0].passed);
    }

    #[test]
    fn merging_with_empty_run_is_identity() {
        let a = ThinnedRun {
            z: 0.4,
            points: vec![1.0, 0.5, -2.0],
        };
        let empty = ThinnedRun {
            z: 0.0,
            points: vec![],
        };
        assert_eq!(merge_thinned(&a, &empty), a);
    }

    #[test]
    fn merged_thinning_equals_block_matrix_thinning() {
        use crate::bbm_sim::{leaf_configuration, simulate_tree, ExtremalConfiguration, SimConfig};
        use crate::genealogy::{overlap_matrix_for, q_thinning_matrix, OverlapMatrix};
        let ta = simulate_tree(&SimConfig::new(4.0, 1)).unwrap();
        let tb = simulate_tree(&SimConfig::new(4.0, 2)).unwrap();
        let (ca, cb) = (leaf_configuration(&ta).unwrap(), leaf_configuration(&tb).unwrap());
        let (ma, mb) = (
            overlap_matrix_for(&ta, &ca.leaf_ids, 4096).unwrap(),
            overlap_matrix_for(&tb, &cb.leaf_ids, 4096).unwrap(),
        );
        // Union in decreasing order, with source tags.
        let mut tagged: Vec<(f64, usize, usize)> = ca
            .positions
            .iter()
            .enumerate()
            .map(|(i, &x)| (x, 0, i))
            .chain(cb.positions.iter().enumerate().map(|(i, &x)| (x, 1, i)))
            .collect();
        tagged.sort_by(|a, b| b.0.total_cmp(&a.0));
        let n = tagged.len();
        let mut entries = vec![0.0; n * n];
        for (p, a) in tagged.iter().enumerate() {
            for (q, b) in tagged.iter().enumerate() {
                entries[p * n + q] = match (a.1, b.1) {
                    (0, 0) => ma.get(a.2, b.2),
                    (1, 1) => mb.get(a.2, b.2),
                    _ => 0.0,
                };
            }
        }
        let union = ExtremalConfiguration {
            positions: tagged.iter().map(|t| t.0).collect(),
            leaf_ids: (0..n).collect(),
            horizon: 4.0,
        };
        let m = OverlapMatrix::from_entries(n, 4.0, entries).unwrap();
        let direct = q_thinning_matrix(&union, &m, 0.5).unwrap();
        let ra = ThinnedRun {
            z: 1.0,
            points: q_thinning_matrix(&ca, &ma, 0.5).unwrap().positions,
        };
        let rb = ThinnedRun {
            z: 1.0,
            points: q_thinning_matrix(&cb, &mb, 0.5).unwrap().positions,
        };
        assert_eq!(merge_thinned(&ra, &rb).points, direct.positions);
    }

    #[test]
    fn laplace_zero_function_is_exact() {
        let runs = fake_runs(50);
        let c = laplace_functional_compare(&runs, &StepFunction::zero(), 0.4, 100, 1).unwrap();
        assert_eq!(c.lhs, 1.0);
        assert_eq!(c.rhs, 1.0);
        assert_eq!(c.relative_difference, 0.0);
    }

    #[test]
    fn laplace_on_ppp_agrees() {
        let base = fake_runs(3000);
        let ppp = ppp_control_runs(&base, 0.5, -1.0, 5).unwrap();
        let phi = StepFunction::new(vec![(0.0, 1.0, 1.0)]).unwrap();
        let c = laplace_functional_compare(&ppp, &phi, 0.5, 200, 2).unwrap();
        assert!(c.relative_difference < 0.02, "{c:?}");
        assert!(c.intervals_overlap());
        // Large weight: probability of no point in [x0, x0 + 3).
        let hard = StepFunction::new(vec![(0.5, 3.5, 20.0)]).unwrap();
        let c = laplace_functional_compare(&ppp, &hard, 0.5, 200, 2).unwrap();
        assert!(c.relative_difference < 0.03, "{c:?}");
        assert!(StepFunction::new(vec![(0.0, 1.0, -1.0)]).is_err());
    }

    #[test]
    fn rank_gaps() {
        assert_eq!(
            rank_gap_profile(&[vec![3.0, 2.0, 1.0]], 2).unwrap(),
            vec![(1, 1.0), (2, 1.0)]
        );
        assert!(rank_gap_profile(&[vec![3.0, 2.0]], 2).is_err());
    }

    /// `E[log u_n]` for `u_n ~ Gamma(n, 1)` by Simpson quadrature.
    fn mean_log_gamma(n: usize) -> f64 {
        let ln_gamma_n: f64 = (1..n).map(|k| (k as f64).ln()).sum();
        // Substitute u = e^v.
        crate::point_process::simpson(
            |v| v * (n as f64 * v - v.exp() - ln_gamma_n).exp(),
            -40.0,
            6.0 + (n as f64).ln() * 2.0,
            20_000,
        )
    }

    #[test]
    fn ppp_rank_gaps_match_quadrature() {
        let configs: Vec<Vec<f64>> = (0..4000)
            .map(|s| sample_exponential_ppp(1.0, -4.0, s).unwrap().points)
            .filter(|p| p.len() >= 11)
            .collect();
        assert!(configs.len() > 3990);
        let profile = rank_gap_profile(&configs, 10).unwrap();
        for (n, g) in profile {
            let oracle = (mean_log_gamma(n + 1) - mean_log_gamma(n)) / SQRT2;
            assert!((g / oracle - 1.0).abs() < 0.05, "n={n}: {g} vs {oracle}");
        }
    }

    #[test]
    fn kappa_bound_fit() {
        let m = synthetic_maxima(0.5, 5000, 8);
        let grid = [1.0, 1.25, 1.5];
        let k = fit_tail_kappa(&m, &grid);
        let check: Vec<f64> = (0..=8).map(|i| 1.0 + 0.25 * i as f64).collect();
        let tail = empirical_tail(&m, &check);
        assert!(tail.iter().zip(&check).all(|(&p, &y)| p <= k * tail_bound_shape(y)));
    }

    #[test]
    fn reports_render() {
        let r = TestReport::new("x", 0.5, Some(0.2), true).with_size("n", 3);
        assert!(r.text_line().starts_with("[PASS] x"));
        let json = serde_json::to_string(&r).unwrap();
        let back: TestReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
