//! Samplers for the exponential Poisson process and the decorated
//! (cluster and tidal) processes built from it.
//!
//! Decorated processes attach to every atom `η` an independent BBM run for
//! time `r` and emit `η + x_k(r) − √2 r`. Only points in `[view_low, ∞)`
//! are kept. Two devices keep this finite:
//!
//! * Atoms whose first moment (expected number of descendants landing in
//!   the view) is below `atom_epsilon` are not sampled. Their total first moment
//!   is computed by quadrature and reported as `neglected_mass`.
//! * Cluster particles are pruned at branch events once their first moment
//!   drops below `epsilon`. The first moments of the pruned particles are summed into
//!   `lost_mass`.
//!
//! Observed count plus `lost_mass` plus `neglected_mass` is an unbiased
//! estimate of the mean count of the untruncated-by-pruning process, and
//! the same sum bounds the probability that a dropped atom or particle would
//! have hit the view.

use std::io::Write;

use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::bbm_sim::{simulate_endpoints, OffspringLaw, DEFAULT_NODE_CAP, LOG_CORRECTION, SQRT2};
use crate::error::{LabError, Result};
use crate::fmt::f64_17;
use crate::rng::{derive_seed, StreamRng};

/// Default per-atom and per-particle first-moment cutoff.
pub const DEFAULT_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    Ppp,
    Cluster,
    Tidal,
}

impl ProcessKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ppp => "ppp",
            Self::Cluster => "cluster",
            Self::Tidal => "tidal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSample {
    /// Decreasing.
    pub points: Vec<f64>,
    pub window_low: f64,
    /// `None` means `+∞`.
    pub window_high: Option<f64>,
    pub intensity_scale: f64,
    pub seed: u64,
    pub kind: ProcessKind,
    pub r: Option<f64>,
    /// Configured truncation depth of the atom density.
    pub depth: Option<f64>,
    /// Depth down to which atoms were actually sampled.
    pub sampled_depth: Option<f64>,
    pub atom_count: usize,
    /// Number of atoms with at least one descendant in the window.
    pub atoms_in_view: usize,
    pub lost_mass: f64,
    pub neglected_mass: f64,
    pub nodes: usize,
}

impl PointSample {
    pub fn count_above(&self, y: f64) -> usize {
        self.points.iter().take_while(|&&x| x >= y).count()
    }

    /// One point per row, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x")?;
        for &x in &self.points {
            writeln!(out, "{}", f64_17(x))?;
        }
        Ok(())
    }

    pub fn write_sidecar<W: Write>(&self, out: W, extra: &serde_json::Value) -> Result<()> {
        let mut meta = serde_json::to_value(self)?;
        if let Some(map) = meta.as_object_mut() {
            map.remove("points");
            map.insert("point_count".into(), self.points.len().into());
            if let Some(extra) = extra.as_object() {
                for (k, v) in extra {
                    map.insert(k.clone(), v.clone());
                }
            }
        }
        serde_json::to_writer_pretty(out, &meta)?;
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(LabError::InvalidParameter(format!(
            "intensity scale must be positive and finite, got {lambda}"
        )))
    }
}

fn sort_desc(points: &mut [f64]) {
    points.sort_unstable_by(|a, b| b.total_cmp(a));
}

/// PPP with intensity `λ √2 e^{−√2 x}` on `[low, ∞)`.
pub fn sample_exponential_ppp(lambda: f64, low: f64, seed: u64) -> Result<PointSample> {
    check_lambda(lambda)?;
    let mut rng = StreamRng::new(derive_seed(seed, "ppp", 0));
    let mean = lambda * (-SQRT2 * low).exp();
    let count = poisson(mean, &mut rng)?;
    let mut points: Vec<f64> = (0..count)
        .map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            low + e / SQRT2
        })
        .collect();
    sort_desc(&mut points);
    Ok(PointSample {
        points,
        window_low: low,
        window_high: None,
        intensity_scale: lambda,
        seed,
        kind: ProcessKind::Ppp,
        r: None,
        depth: None,
        sampled_depth: None,
        atom_count: count,
        atoms_in_view: count,
        lost_mass: 0.0,
        neglected_mass: 0.0,
        nodes: 0,
    })
}

fn poisson(mean: f64, rng: &mut StreamRng) -> Result<usize> {
    if mean == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean)
        .map_err(|e| LabError::InvalidParameter(format!("poisson mean {mean}: {e}")))?;
    let n: f64 = d.sample(rng);
    Ok(n as usize)
}

/// Standard normal upper tail.
pub fn normal_tail(z: f64) -> f64 {
    0.5 * erfc(z / SQRT2)
}

/// Expected number of descendants at time `remaining` from now, of a single
/// particle, that gain at least `climb` in position (drift not included).
pub fn first_moment(growth: f64, remaining: f64, climb: f64) -> f64 {
    if remaining <= 0.0 {
        return if climb <= 0.0 { 1.0 } else { 0.0 };
    }
    (growth * remaining).exp() * normal_tail(climb / remaining.sqrt())
}

/// Expected number of points in `[y, ∞)` produced by an atom at `−d`.
pub fn atom_first_moment(growth: f64, r: f64, y: f64, d: f64) -> f64 {
    first_moment(growth, r, y + d + SQRT2 * r)
}

/// Atom density in terms of the depth `d = −x`.
fn atom_density(kind: ProcessKind, d: f64) -> f64 {
    match kind {
        ProcessKind::Cluster => d * (SQRT2 * d).exp(),
        _ => (SQRT2 * d).exp(),
    }
}

/// Composite Simpson rule with `panels` (rounded up to even) intervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = panels.max(2) + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + h * i as f64);
    }
    s * h / 3.0
}

/// Expected count of atoms with depth in `[d_lo, d_hi]`.
pub fn atom_mass(kind: ProcessKind, lambda: f64, d_lo: f64, d_hi: f64) -> f64 {
    let primitive = |d: f64| match kind {
        ProcessKind::Cluster => (SQRT2 * d).exp() * (d / SQRT2 - 0.5),
        _ => (SQRT2 * d).exp() / SQRT2,
    };
    lambda * (primitive(d_hi) - primitive(d_lo))
}

/// Expected number of points in `[y, ∞)` from atoms with depth in
/// `[d_lo, d_hi]`.
pub fn view_mass(
    kind: ProcessKind,
    lambda: f64,
    growth: f64,
    r: f64,
    y: f64,
    d_lo: f64,
    d_hi: f64,
) -> f64 {
    if d_hi <= d_lo {
        return 0.0;
    }
    if r == 0.0 {
        // Atoms are the points: those with −d ≥ y.
        return atom_mass(kind, lambda, d_lo, d_hi.min(-y).max(d_lo));
    }
    let panels = (((d_hi - d_lo) * 200.0).ceil() as usize).clamp(200, 200_000);
    lambda
        * simpson(
            |d| atom_density(kind, d) * atom_first_moment(growth, r, y, d),
            d_lo,
            d_hi,
            panels,
        )
}

/// Largest depth whose atoms still have first moment `>= epsilon`.
pub fn depth_for_epsilon(growth: f64, r: f64, y: f64, epsilon: f64) -> f64 {
    if r == 0.0 {
        return -y;
    }
    let f = |d: f64| atom_first_moment(growth, r, y, d) - epsilon;
    let (mut lo, mut hi) = (-y - SQRT2 * r - 50.0 * r.sqrt() - 50.0, -y + 1.0);
    while f(hi) > 0.0 {
        hi += hi.abs() + 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoratedParams {
    pub kind: ProcessKind,
    pub r: f64,
    pub lambda: f64,
    /// Atoms are restricted to depth `<= depth` (positions `>= −depth`).
    pub depth: f64,
    pub view_low: f64,
    /// Atoms with a smaller first moment are not sampled.
    pub atom_epsilon: f64,
    /// Particles with a smaller first moment are pruned.
    pub epsilon: f64,
    pub offspring: OffspringLaw,
    pub node_cap: usize,
}

impl DecoratedParams {
    pub fn cluster(r: f64, lambda: f64, view_low: f64) -> Self {
        Self {
            kind: ProcessKind::Cluster,
            r,
            lambda,
            depth: default_cluster_depth(r),
            view_low,
            atom_epsilon: DEFAULT_EPSILON,
            epsilon: DEFAULT_EPSILON,
            offspring: OffspringLaw::binary(),
            node_cap: DEFAULT_NODE_CAP,
        }
    }

    pub fn tidal(r: f64, lambda: f64, view_low: f64) -> Self {
        Self {
            kind: ProcessKind::Tidal,
            depth: default_tidal_depth(r),
            ..Self::cluster(r, lambda, view_low)
        }
    }

    pub fn with_depth(mut self, depth: f64) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_atom_epsilon(mut self, epsilon: f64) -> Self {
        self.atom_epsilon = epsilon;
        self
    }

    fn growth(&self) -> f64 {
        self.offspring.mean() - 1.0
    }

    fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.kind == ProcessKind::Ppp {
            return Err(LabError::InvalidParameter("decorated sampler needs cluster or tidal".into()));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(LabError::InvalidParameter(format!("drift time r = {}", self.r)));
        }
        if !self.depth.is_finite() {
            return Err(LabError::InvalidParameter(
                "truncation depth must be finite: the atom density is not integrable at -inf".into(),
            ));
        }
        if self.kind == ProcessKind::Cluster && self.depth <= 0.0 {
            return Err(LabError::InvalidParameter(format!("trunc_A = {} must be positive", self.depth)));
        }
        for e in [self.epsilon, self.atom_epsilon] {
            if !(e > 0.0 && e < 1.0) {
                return Err(LabError::InvalidParameter(format!("epsilon = {e}")));
            }
        }
        Ok(())
    }

    /// Depth actually sampled: the configured depth, cut where atoms stop
    /// mattering.
    pub fn sampled_depth(&self) -> f64 {
        let cut = depth_for_epsilon(self.growth(), self.r, self.view_low, self.atom_epsilon);
        let floor = if self.kind == ProcessKind::Cluster { 0.0 } else { f64::NEG_INFINITY };
        cut.min(self.depth).max(floor)
    }

    /// First moment of the atoms that are never sampled.
    pub fn neglected_mass(&self) -> f64 {
        view_mass(
            self.kind,
            self.lambda,
            self.growth(),
            self.r,
            self.view_low,
            self.sampled_depth(),
            self.depth,
        )
    }

    /// Expected count in `[view_low, ∞)`, by quadrature.
    pub fn expected_count(&self) -> f64 {
        let shallowest = match self.kind {
            ProcessKind::Cluster => 0.0,
            // Atoms high above the view contribute their full mass; the
            // density decays like e^{−√2 x}, so 40 units is far enough.
            _ => -(self.view_low.max(0.0) + SQRT2 * self.r + 40.0),
        };
        view_mass(
            self.kind,
            self.lambda,
            self.growth(),
            self.r,
            self.view_low,
            shallowest,
            self.depth,
        )
    }
}

/// `3 r/√2 + 10`.
pub fn default_cluster_depth(r: f64) -> f64 {
    3.0 * r / SQRT2 + 10.0
}

/// `√2 r + 10 √r`.
pub fn default_tidal_depth(r: f64) -> f64 {
    SQRT2 * r + 10.0 * r.sqrt()
}

/// Atom depths, shallowest first.
fn sample_atoms(params: &DecoratedParams, depth: f64, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let lambda = params.lambda;
    let mut depths = match params.kind {
        ProcessKind::Cluster => {
            let count = poisson(atom_mass(ProcessKind::Cluster, lambda, 0.0, depth), rng)?;
            let span = (SQRT2 * depth).exp_m1();
            let mut out = Vec::with_capacity(count);
            // Proposal ∝ e^{√2 d} on [0, depth], accepted with probability d/depth.
            while out.len() < count {
                let d = (rng.open01() * span).ln_1p() / SQRT2;
                if rng.open01() * depth < d {
                    out.push(d);
                }
            }
            out
        }
        _ => {
            let count = poisson(lambda * (SQRT2 * depth).exp() / SQRT2, rng)?;
            (0..count)
                .map(|_| {
                    let e: f64 = Exp1.sample(rng);
                    depth - e / SQRT2
                })
                .collect()
        }
    };
    depths.sort_unstable_by(f64::total_cmp);
    Ok(depths)
}

/// Decorated process restricted to `[view_low, ∞)`.
pub fn sample_decorated(params: &DecoratedParams, seed: u64) -> Result<PointSample> {
    sample_decorated_inner(params, seed, false)
}

/// Like [`sample_decorated`], but stops at the first atom that reaches the
/// view. `lost_mass` then only covers the atoms processed so far.
pub fn sample_decorated_until_hit(params: &DecoratedParams, seed: u64) -> Result<PointSample> {
    sample_decorated_inner(params, seed, true)
}

fn sample_decorated_inner(params: &DecoratedParams, seed: u64, stop: bool) -> Result<PointSample> {
    params.validate()?;
    let r = params.r;
    let y = params.view_low;
    let growth = params.growth();
    let mean_offspring = params.offspring.mean();
    let depth = params.sampled_depth();
    let mut rng = StreamRng::new(derive_seed(seed, params.kind.name(), 0));
    let atoms = sample_atoms(params, depth, &mut rng)?;

    let mut points = Vec::new();
    let mut atoms_in_view = 0;
    let mut lost = 0.0;
    let mut nodes = 0;
    for (i, &d) in atoms.iter().enumerate() {
        let eta = -d;
        let before = points.len();
        if r == 0.0 {
            if eta >= y {
                points.push(eta);
            }
        } else {
            // Raw BBM level a descendant must reach at time r.
            let target = y - eta + SQRT2 * r;
            let epsilon = params.epsilon;
            // Pruning happens at a branch event, just before the particle
            // is replaced by its offspring.
            let at_branch = |s: f64, x: f64| mean_offspring * first_moment(growth, r - s, target - x);
            let run = simulate_endpoints(
                r,
                &params.offspring,
                derive_seed(seed, "atom", i as u64),
                params.node_cap,
                |s, x| at_branch(s, x) < epsilon,
            )?;
            nodes += run.nodes;
            lost += run.pruned.iter().map(|&(s, x)| at_branch(s, x)).sum::<f64>();
            points.extend(
                run.positions
                    .iter()
                    .map(|&x| eta + x - SQRT2 * r)
                    .filter(|&p| p >= y),
            );
        }
        if points.len() > before {
            atoms_in_view += 1;
            if stop {
                break;
            }
        }
    }
    sort_desc(&mut points);
    Ok(PointSample {
        points,
        window_low: y,
        window_high: None,
        intensity_scale: params.lambda,
        seed,
        kind: params.kind,
        r: Some(r),
        depth: Some(params.depth),
        sampled_depth: Some(depth),
        atom_count: atoms.len(),
        atoms_in_view,
        lost_mass: lost,
        neglected_mass: params.neglected_mass(),
        nodes,
    })
}

/// Cluster process with atom density `λ (−x) e^{−√2 x}` on `[−trunc_a, 0)`.
pub fn sample_cluster_process(
    r: f64,
    lambda: f64,
    trunc_a: f64,
    view_low: f64,
    seed: u64,
) -> Result<PointSample> {
    sample_decorated(&DecoratedParams::cluster(r, lambda, view_low).with_depth(trunc_a), seed)
}

/// Tidal process with atom density `λ e^{−√2 x}` on `[−depth, ∞)`.
pub fn sample_tidal_process(
    r: f64,
    lambda: f64,
    depth: f64,
    view_low: f64,
    seed: u64,
) -> Result<PointSample> {
    sample_decorated(&DecoratedParams::tidal(r, lambda, view_low).with_depth(depth), seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCountEstimate {
    pub r: f64,
    pub y: f64,
    pub replicas: usize,
    /// Mean of observed count plus pruned first moments, plus the neglected
    /// atom mass.
    pub mean: f64,
    pub stderr: f64,
    pub observed_mean: f64,
    pub lost_mean: f64,
    pub neglected_mass: f64,
    /// The same expectation by quadrature.
    pub expected: f64,
}

/// Monte Carlo estimate of the mean number of points in `[view_low, ∞)`.
///
/// Each pruned particle contributes its exact conditional expectation, so
/// the estimate is unbiased whatever the pruning threshold.
pub fn mean_count(params: &DecoratedParams, replicas: usize, seed: u64) -> Result<MeanCountEstimate> {
    if replicas < 2 {
        return Err(LabError::InvalidParameter("need at least 2 replicas".into()));
    }
    let (mut sum, mut sq, mut observed, mut lost) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..replicas {
        let s = sample_decorated(params, derive_seed(seed, "mean-count", k as u64))?;
        let v = s.points.len() as f64 + s.lost_mass;
        sum += v;
        sq += v * v;
        observed += s.points.len() as f64;
        lost += s.lost_mass;
    }
    let n = replicas as f64;
    let m = sum / n;
    let var = (sq - n * m * m) / (n - 1.0);
    let neglected_mass = params.neglected_mass();
    Ok(MeanCountEstimate {
        r: params.r,
        y: params.view_low,
        replicas,
        mean: m + neglected_mass,
        stderr: (var.max(0.0) / n).sqrt(),
        observed_mean: observed / n,
        lost_mean: lost / n,
        neglected_mass,
        expected: params.expected_count(),
    })
}

/// Wilson score interval for `hits` successes out of `n`.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftOffEstimate {
    pub r: f64,
    pub y: f64,
    pub lambda: f64,
    pub replicas: usize,
    pub hits: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean first moment of pruned particles over replicas without a hit.
    pub lost_mass: f64,
    pub neglected_mass: f64,
    /// `ci_high` plus every dropped first moment: a 95% upper bound for the
    /// process without pruning.
    pub upper_bound: f64,
}

/// Monte Carlo estimate of `P[Π̃_r[y, ∞) ≥ 1]`.
pub fn drift_off_probability(
    params: &DecoratedParams,
    replicas: usize,
    seed: u64,
) -> Result<DriftOffEstimate> {
    if replicas < 100 {
        return Err(LabError::InvalidParameter(format!(
            "need at least 100 replicas, got {replicas}"
        )));
    }
    let mut hits = 0;
    let mut lost = 0.0;
    for k in 0..replicas {
        let s = sample_decorated_until_hit(params, derive_seed(seed, "drift-off", k as u64))?;
        if s.points.is_empty() {
            lost += s.lost_mass;
        } else {
            hits += 1;
        }
    }
    let (ci_low, ci_high) = wilson_interval(hits, replicas, Z95);
    let lost_mass = lost / replicas as f64;
    let neglected_mass = params.neglected_mass();
    Ok(DriftOffEstimate {
        r: params.r,
        y: params.view_low,
        lambda: params.lambda,
        replicas,
        hits,
        estimate: hits as f64 / replicas as f64,
        ci_low,
        ci_high,
        lost_mass,
        neglected_mass,
        upper_bound: (ci_high + lost_mass + neglected_mass).min(1.0),
    })
}

/// Right side of the maximum tail bound
/// `P[M(r) − m(r) ≥ X] ≤ ρ X exp(−√2 X − X²/(2r) + c X log r / r)`.
pub fn max_tail_shape(r: f64, x: f64) -> f64 {
    x * (-SQRT2 * x - x * x / (2.0 * r) + LOG_CORRECTION * x * r.ln() / r).exp()
}

/// Smallest `ρ` making the tail bound hold at every grid point where the
/// empirical tail has at least `min_count` exceedances.
pub fn fit_envelope_rho(centered_maxima: &[f64], r: f64, grid: &[f64], min_count: usize) -> Result<f64> {
    let n = centered_maxima.len() as f64;
    let mut rho: f64 = 0.0;
    let mut used = 0;
    for &x in grid.iter().filter(|&&x| x > 1.0) {
        let count = centered_maxima.iter().filter(|&&m| m >= x).count();
        if count >= min_count {
            rho = rho.max(count as f64 / n / max_tail_shape(r, x));
            used += 1;
        }
    }
    if used == 0 {
        return Err(LabError::EmptyTail("no grid point above 1 has enough exceedances".into()));
    }
    Ok(rho)
}

/// Upper bound on `P[Π̃_r[y, ∞) ≥ 1]` from the tail bound with constant
/// `rho`, for atoms on `[−depth, ∞)`.
pub fn drift_off_envelope(r: f64, y: f64, lambda: f64, rho: f64, depth: f64) -> f64 {
    // In the variable X = y − x + c log r the atom density is
    // λ e^{−√2 (y + c log r)} e^{√2 X}.
    let shift = y + LOG_CORRECTION * r.ln();
    let scale = lambda * (-SQRT2 * shift).exp();
    let x_max = shift + depth;
    let mut mass = if x_max <= 1.0 {
        (SQRT2 * x_max).exp() / SQRT2
    } else {
        SQRT2.exp() / SQRT2
    };
    if x_max > 1.0 {
        let panels = ((x_max - 1.0) * 400.0).ceil() as usize;
        mass += simpson(
            |x| (rho * max_tail_shape(r, x)).min(1.0) * (SQRT2 * x).exp(),
            1.0,
            x_max,
            panels,
        );
    }
    1.0 - (-scale * mass).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppp_mean_counts() {
        let n = 4000;
        let mean = |low: f64| {
            (0..n)
                .map(|s| sample_exponential_ppp(1.0, low, s).unwrap().points.len())
                .sum::<usize>() as f64
                / n as f64
        };
        // sd of the mean: sqrt(1/4000) ~ 0.016, sqrt(2/4000) ~ 0.022
        assert!((mean(0.0) - 1.0).abs() < 0.08);
        assert!((mean(-(2f64.ln()) / SQRT2) - 2.0).abs() < 0.11);
    }

    #[test]
    fn ppp_points_sorted_in_window() {
        let s = sample_exponential_ppp(5.0, -1.0, 3).unwrap();
        assert!(s.points.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.points.iter().all(|&x| x >= -1.0));
        assert!(sample_exponential_ppp(0.0, 0.0, 1).is_err());
        assert!(sample_exponential_ppp(-1.0, 0.0, 1).is_err());
    }

    #[test]
    fn atom_mass_matches_quadrature() {
        let exact = atom_mass(ProcessKind::Cluster, 1.0, 0.0, 1.0);
        let quad = simpson(|d| d * (SQRT2 * d).exp(), 0.0, 1.0, 2000);
        assert!((exact - quad).abs() < 1e-12);
        // e^{√2}(1/√2 − 1/2) + 1/2
        assert!((exact - 1.351_882_046_164_079_3).abs() < 1e-12);
        let tidal = atom_mass(ProcessKind::Tidal, 1.0, -50.0, 0.0);
        assert!((tidal - 1.0 / SQRT2).abs() < 1e-12);
    }

    #[test]
    fn r_zero_gives_atoms() {
        let p = DecoratedParams::cluster(0.0, 3.0, -1.0).with_depth(2.0);
        let s = sample_decorated(&p, 11).unwrap();
        assert_eq!(s.points.len(), s.atom_count);
        assert!(s.points.iter().all(|&x| (-1.0..0.0).contains(&x)));
        assert_eq!(s.nodes, 0);
    }

    #[test]
    fn r_zero_cluster_mean_count() {
        let p = DecoratedParams::cluster(0.0, 1.0, -1.0).with_depth(1.0);
        let n = 4000;
        let total: usize = (0..n).map(|k| sample_decorated(&p, k).unwrap().points.len()).sum();
        let expected = atom_mass(ProcessKind::Cluster, 1.0, 0.0, 1.0);
        assert!((p.expected_count() - expected).abs() < 1e-9);
        let se = (expected / n as f64).sqrt();
        assert!((total as f64 / n as f64 - expected).abs() < 5.0 * se);
    }

    #[test]
    fn cluster_mean_count_matches_first_moment() {
        let p = DecoratedParams::cluster(2.0, 1.0, 0.0);
        let n = 3000;
        let mut sum = 0.0;
        for k in 0..n {
            let s = sample_decorated(&p, k).unwrap();
            sum += s.points.len() as f64 + s.lost_mass;
        }
        let mean = sum / n as f64 + p.neglected_mass();
        let exact = p.expected_count();
        assert!((mean - exact).abs() < 0.1 * exact, "{mean} vs {exact}");
    }

    #[test]
    fn tidal_first_moment_is_constant_in_r() {
        for r in [1.0, 4.0, 8.0] {
            let p = DecoratedParams::tidal(r, 1.0, 0.0).with_depth(80.0);
            assert!((p.expected_count() - 1.0 / SQRT2).abs() < 1e-6, "r = {r}");
        }
    }

    #[test]
    fn infinite_depth_rejected() {
        assert!(sample_cluster_process(1.0, 1.0, f64::INFINITY, 0.0, 1).is_err());
        assert!(sample_cluster_process(1.0, 1.0, -1.0, 0.0, 1).is_err());
    }

    #[test]
    fn drift_off_at_r_zero_is_atom_probability() {
        let p = DecoratedParams::tidal(0.0, 1.0, -2.0).with_depth(2.0);
        let est = drift_off_probability(&p, 4000, 5).unwrap();
        let exact = 1.0 - (-atom_mass(ProcessKind::Tidal, 1.0, -80.0, 2.0)).exp();
        assert!(est.ci_low - 0.01 < exact && exact < est.ci_high + 0.01);
        assert!(drift_off_probability(&p, 10, 5).is_err());
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 100, Z95);
        assert!(lo < 0.3 && 0.3 < hi);
        assert!((lo - 0.2189).abs() < 1e-3 && (hi - 0.3958).abs() < 1e-3);
    }

    #[test]
    fn depth_cut_has_target_first_moment() {
        let d = depth_for_epsilon(1.0, 8.0, 0.0, 1e-7);
        assert!((atom_first_moment(1.0, 8.0, 0.0, d) / 1e-7 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn csv_and_sidecar() {
        let s = sample_exponential_ppp(2.0, 0.0, 9).unwrap();
        let mut csv = Vec::new();
        s.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), s.points.len() + 1);
        let mut side = Vec::new();
        s.write_sidecar(&mut side, &serde_json::json!({"config_hash": "x"})).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&side).unwrap();
        assert_eq!(v["kind"], "ppp");
        assert_eq!(v["config_hash"], "x");
    }
}
