//! Finite-difference solver for `u_t = ½ u_xx + Σ p_k u^k − u`.
//!
//! With `u(0, x) = 1{x ≥ 0}` the solution is the law of the BBM maximum,
//! `u(t, x) = P[max_k x_k(t) ≤ x]`, and `u(t, m(t) + ·)` approaches the
//! traveling wave `ω`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbm_sim::{OffspringLaw, LOG_CORRECTION, SQRT2};
use crate::error::{LabError, Result};
use crate::fmt::f64_17;
use crate::stats::{EstimatedConstant, FitMethod};

/// Sup-norm tolerance for the comoving-frame change of a converged profile
/// over one time step.
pub const CONVERGENCE_TOL: f64 = 1e-6;

/// The solver state is `w = 1 − u`, so the leading edge keeps full relative
/// precision far below 1e−16. Rounding `u` to 1 there acts as a cutoff that
/// slows the pulled front by about 0.009.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveProfile {
    pub x_min: f64,
    pub dx: f64,
    /// `1 − u_j`.
    pub tail: Vec<f64>,
    pub time: f64,
    /// Translation applied to the lab frame: lab `x = x_min + j dx + shift`.
    pub shift: f64,
    /// Comoving-frame sup-norm change over the last step, when measured.
    pub convergence_gap: Option<f64>,
}

impl WaveProfile {
    fn grid(x_min: f64, x_max: f64, dx: f64) -> Result<usize> {
        if !(dx > 0.0) || !(x_max > x_min + 2.0 * dx) {
            return Err(LabError::InvalidParameter(format!(
                "grid [{x_min}, {x_max}] with dx = {dx}"
            )));
        }
        Ok(((x_max - x_min) / dx).round() as usize + 1)
    }

    /// `1{x ≥ 0}` on `[x_min, x_max]`.
    pub fn heaviside(x_min: f64, x_max: f64, dx: f64) -> Result<Self> {
        let n = Self::grid(x_min, x_max, dx)?;
        let tail = (0..n)
            .map(|j| if x_min + j as f64 * dx >= 0.0 { 0.0 } else { 1.0 })
            .collect();
        Ok(Self::from_tail(x_min, dx, tail))
    }

    pub fn constant(x_min: f64, x_max: f64, dx: f64, c: f64) -> Result<Self> {
        let n = Self::grid(x_min, x_max, dx)?;
        Ok(Self::from_tail(x_min, dx, vec![1.0 - c; n]))
    }

    pub fn from_values(x_min: f64, dx: f64, values: Vec<f64>) -> Self {
        Self::from_tail(x_min, dx, values.into_iter().map(|u| 1.0 - u).collect())
    }

    pub fn from_tail(x_min: f64, dx: f64, tail: Vec<f64>) -> Self {
        Self {
            x_min,
            dx,
            tail,
            time: 0.0,
            shift: 0.0,
            convergence_gap: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tail.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tail.is_empty()
    }

    pub fn u(&self, j: usize) -> f64 {
        1.0 - self.tail[j]
    }

    pub fn values(&self) -> Vec<f64> {
        self.tail.iter().map(|w| 1.0 - w).collect()
    }

    /// Lab-frame abscissa of grid point `j`.
    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx + self.shift
    }

    /// Rows `x,u` with a header, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,u")?;
        for j in 0..self.len() {
            writeln!(out, "{},{}", f64_17(self.x(j)), f64_17(self.u(j)))?;
        }
        Ok(())
    }
}

/// `−(Σ p_k u^k − u)` written in `w = 1 − u`.
enum Kinetics {
    Binary,
    General(Vec<f64>),
}

impl Kinetics {
    fn new(offspring: &OffspringLaw) -> Self {
        let probs = offspring.probs();
        if probs.len() == 2 && probs[0] == 0.0 && probs[1] == 1.0 {
            Kinetics::Binary
        } else {
            Kinetics::General(probs.to_vec())
        }
    }

    #[inline]
    fn rate(&self, w: f64) -> f64 {
        match self {
            Kinetics::Binary => w - w * w,
            Kinetics::General(probs) => {
                let l = (-w).ln_1p();
                let grown: f64 = probs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p * -(((i + 1) as f64) * l).exp_m1())
                    .sum();
                grown - w
            }
        }
    }
}

fn check_step(dt: f64, dx: f64) -> Result<()> {
    if !(dt > 0.0) || dt > dx * dx {
        return Err(LabError::Unstable { dt, limit: dx * dx });
    }
    Ok(())
}

fn step(kin: &Kinetics, w: &[f64], next: &mut [f64], dt: f64, dx: f64) {
    let n = w.len();
    let a = 0.5 * dt / (dx * dx);
    next[0] = w[0];
    next[n - 1] = w[n - 1];
    for j in 1..n - 1 {
        let v = w[j] + a * (w[j + 1] - 2.0 * w[j] + w[j - 1]) + dt * kin.rate(w[j]);
        next[j] = v.clamp(0.0, 1.0);
    }
}

/// Advance `steps` explicit Euler steps; boundary values stay fixed.
pub fn evolve(profile: &WaveProfile, offspring: &OffspringLaw, dt: f64, steps: usize) -> Result<WaveProfile> {
    check_step(dt, profile.dx)?;
    let kin = Kinetics::new(offspring);
    let mut w = profile.tail.clone();
    let mut next = w.clone();
    for _ in 0..steps {
        step(&kin, &w, &mut next, dt, profile.dx);
        std::mem::swap(&mut w, &mut next);
    }
    Ok(WaveProfile {
        tail: w,
        time: profile.time + dt * steps as f64,
        convergence_gap: None,
        ..profile.clone()
    })
}

/// Lab-frame abscissa where `u` first crosses `level`, by linear
/// interpolation.
pub fn front_position(profile: &WaveProfile, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(LabError::InvalidParameter(format!("level {level} outside (0, 1)")));
    }
    let target = 1.0 - level;
    let w = &profile.tail;
    for j in 0..w.len().saturating_sub(1) {
        if w[j] > target && w[j + 1] <= target {
            let frac = (w[j] - target) / (w[j] - w[j + 1]);
            return Ok(profile.x(j) + frac * profile.dx);
        }
    }
    Err(LabError::NoCrossing(level))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub dx: f64,
    /// `dt = dt_factor dx²`.
    pub dt_factor: f64,
    pub t_final: f64,
    pub left: f64,
    /// Right end is `√2 t_final + right_pad`.
    pub right_pad: f64,
    /// Front positions are recorded from this time on.
    pub track_from: f64,
    pub track_every: f64,
    pub level: f64,
    pub offspring: OffspringLaw,
}

impl SolveConfig {
    pub fn new(dx: f64, t_final: f64) -> Self {
        Self {
            dx,
            dt_factor: 0.4,
            t_final,
            left: -50.0,
            right_pad: 100.0,
            track_from: 20.0,
            track_every: 1.0,
            level: 0.5,
            offspring: OffspringLaw::binary(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt_factor * self.dx * self.dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontRun {
    pub profile: WaveProfile,
    pub times: Vec<f64>,
    pub fronts: Vec<f64>,
}

impl FrontRun {
    pub fn write_track_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,front")?;
        for (t, f) in self.times.iter().zip(&self.fronts) {
            writeln!(out, "{},{}", f64_17(*t), f64_17(*f))?;
        }
        Ok(())
    }
}

/// Solve from Heaviside data, tracking the front and measuring the
/// comoving-frame change over the final step.
pub fn solve_front(cfg: &SolveConfig) -> Result<FrontRun> {
    let dt = cfg.dt();
    check_step(dt, cfg.dx)?;
    let x_max = SQRT2 * cfg.t_final + cfg.right_pad;
    let mut profile = WaveProfile::heaviside(cfg.left, x_max, cfg.dx)?;
    let kin = Kinetics::new(&cfg.offspring);
    let total = (cfg.t_final / dt).round() as usize;
    let every = ((cfg.track_every / dt).round() as usize).max(1);
    let mut w = profile.tail.clone();
    let mut next = w.clone();
    let mut times = Vec::new();
    let mut fronts = Vec::new();
    for n in 1..=total {
        step(&kin, &w, &mut next, dt, cfg.dx);
        std::mem::swap(&mut w, &mut next);
        let t = n as f64 * dt;
        if n % every == 0 && t >= cfg.track_from - 1e-9 {
            profile.tail.clone_from(&w);
            times.push(t);
            fronts.push(front_position(&profile, cfg.level)?);
        }
    }
    // `next` holds the state one step earlier.
    profile.tail = w;
    profile.time = total as f64 * dt;
    let before = WaveProfile {
        tail: next,
        ..profile.clone()
    };
    profile.convergence_gap = Some(comoving_change(&before, &profile, cfg.level)?);
    Ok(FrontRun {
        profile,
        times,
        fronts,
    })
}

/// Sup-norm difference of two profiles after translating the first by the
/// displacement of the level crossing (first order in the displacement).
pub fn comoving_change(before: &WaveProfile, after: &WaveProfile, level: f64) -> Result<f64> {
    let shift = front_position(after, level)? - front_position(before, level)?;
    let (u, v) = (&before.tail, &after.tail);
    let dx = before.dx;
    let mut gap: f64 = 0.0;
    for j in 1..u.len() - 1 {
        let translated = u[j] - shift * (u[j + 1] - u[j - 1]) / (2.0 * dx);
        gap = gap.max((v[j] - translated).abs());
    }
    Ok(gap)
}

/// Translate the frame by a whole number of cells so that the level
/// crossing sits within one cell of the origin.
pub fn recenter(profile: &WaveProfile, level: f64) -> Result<WaveProfile> {
    let front = front_position(profile, level)?;
    let cells = ((front - profile.shift) / profile.dx).round();
    let mut out = profile.clone();
    out.x_min = profile.x_min - cells * profile.dx;
    out.shift = profile.shift + cells * profile.dx;
    Ok(out)
}

/// Sup norm over the interior of `½ω'' + √2 ω' + Σ p_k ω^k − ω`, with
/// second-order central differences.
pub fn wave_residual(profile: &WaveProfile, offspring: &OffspringLaw) -> Result<f64> {
    match profile.convergence_gap {
        Some(g) if g < CONVERGENCE_TOL => {}
        other => {
            return Err(LabError::NotConverged(format!(
                "comoving change {other:?}, need < {CONVERGENCE_TOL}"
            )))
        }
    }
    Ok(raw_residual(profile, offspring))
}

/// The residual without the convergence precondition.
pub fn raw_residual(profile: &WaveProfile, offspring: &OffspringLaw) -> f64 {
    let kin = Kinetics::new(offspring);
    let w = &profile.tail;
    let h = profile.dx;
    let mut r: f64 = 0.0;
    for j in 1..w.len() - 1 {
        let second = (w[j + 1] - 2.0 * w[j] + w[j - 1]) / (h * h);
        let first = (w[j + 1] - w[j - 1]) / (2.0 * h);
        r = r.max((0.5 * second + SQRT2 * first + kin.rate(w[j])).abs());
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontFit {
    /// From `a t − c log t + b`.
    pub speed: f64,
    pub log_coefficient_free: f64,
    /// From `√2 t − c log t + b`.
    pub log_coefficient: f64,
    pub offset: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Result<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[piv][col].abs() < 1e-300 {
            return Err(LabError::InsufficientPoints("singular least-squares system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Least-squares fits of the tracked front on `[t_lo, t_hi]`.
pub fn fit_front(times: &[f64], fronts: &[f64], t_lo: f64, t_hi: f64) -> Result<FrontFit> {
    let data: Vec<(f64, f64)> = times
        .iter()
        .zip(fronts)
        .filter(|(&t, _)| t >= t_lo && t <= t_hi)
        .map(|(&t, &f)| (t, f))
        .collect();
    if data.len() < 4 {
        return Err(LabError::InsufficientPoints(format!(
            "{} tracked points in [{t_lo}, {t_hi}]",
            data.len()
        )));
    }
    // Free fit: columns t, −log t, 1.
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for &(t, f) in &data {
        let row = [t, -t.ln(), 1.0];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * f;
        }
    }
    let free = solve3(ata, atb)?;
    // Constrained fit: f − √2 t = −c log t + b.
    let n = data.len() as f64;
    let (mut sl, mut sll, mut sy, mut sly) = (0.0, 0.0, 0.0, 0.0);
    for &(t, f) in &data {
        let l = -t.ln();
        let y = f - SQRT2 * t;
        sl += l;
        sll += l * l;
        sy += y;
        sly += l * y;
    }
    let c = (n * sly - sl * sy) / (n * sll - sl * sl);
    let b = (sy - c * sl) / n;
    Ok(FrontFit {
        speed: free[0],
        log_coefficient_free: free[1],
        log_coefficient: c,
        offset: b,
        t_lo,
        t_hi,
        points: data.len(),
    })
}

/// Fixes the translation of the wave before a tail fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Anchor {
    /// `ω(0)` equals this Monte Carlo CDF value `P̂[max − m(t) ≤ 0]`.
    CdfAtZero(f64),
    /// The level-½ crossing of `ω` sits at this Monte Carlo median.
    Median(f64),
}

impl Anchor {
    /// Lab-frame abscissa of the wave's origin.
    pub fn origin(&self, profile: &WaveProfile) -> Result<f64> {
        match *self {
            Anchor::CdfAtZero(p) => front_position(profile, p),
            Anchor::Median(m) => Ok(front_position(profile, 0.5)? - m),
        }
    }
}

/// Tail fit of `1 − ω(x) ≈ C x e^{−√2 x}` over the cells where
/// `tail_lo < 1 − ω < tail_hi`.
pub fn tail_fit(profile: &WaveProfile, anchor: Anchor, tail_lo: f64, tail_hi: f64) -> Result<EstimatedConstant> {
    let origin = anchor.origin(profile)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (j, &tail) in profile.tail.iter().enumerate() {
        let x = profile.x(j) - origin;
        if tail > tail_lo && tail < tail_hi && x > 0.0 {
            sum += tail.ln() - x.ln() + SQRT2 * x;
            count += 1;
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
        }
    }
    if count < 2 {
        return Err(LabError::EmptyTail(format!(
            "fewer than two cells with {tail_lo} < 1 - u < {tail_hi}"
        )));
    }
    Ok(EstimatedConstant {
        c_hat: (sum / count as f64).exp(),
        stderr: 0.0,
        x_lo,
        x_hi,
        method: FitMethod::FkppTail,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshRow {
    pub dx: f64,
    pub speed: f64,
    pub log_coefficient: f64,
    pub residual: f64,
    pub convergence_gap: f64,
}

/// Solve at `dx, dx/2, …` (`levels` meshes) and tabulate the fits.
pub fn mesh_study(base: &SolveConfig, levels: usize, t_lo: f64, t_hi: f64) -> Result<Vec<MeshRow>> {
    (0..levels)
        .into_par_iter()
        .map(|i| {
            let cfg = SolveConfig {
                dx: base.dx / f64::powi(2.0, i as i32),
                ..base.clone()
            };
            let run = solve_front(&cfg)?;
            let fit = fit_front(&run.times, &run.fronts, t_lo, t_hi)?;
            Ok(MeshRow {
                dx: cfg.dx,
                speed: fit.speed,
                log_coefficient: fit.log_coefficient,
                residual: raw_residual(&run.profile, &cfg.offspring),
                convergence_gap: run.profile.convergence_gap.unwrap_or(f64::INFINITY),
            })
        })
        .collect()
}

/// `3/(2√2)`, the coefficient of the logarithmic delay.
pub fn log_correction() -> f64 {
    LOG_CORRECTION
}
