//! One function per subcommand. Each resolves its configuration, writes its
//! files into the output directory and returns a one-line summary.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use bbm_core::bbm_sim::{leaf_configuration, simulate_tree, BranchingTree, SimConfig, SQRT2};
use bbm_core::fkpp::{self, Anchor, SolveConfig};
use bbm_core::fmt::f64_17;
use bbm_core::genealogy::{
    check_gap_horizon, has_genealogical_gap, overlap_matrix_for, q_grid, q_thinning_matrix,
    q_thinning_tree_with, thinning_stable,
};
use bbm_core::martingale::{read_records, RunRecord};
use bbm_core::point_process::{
    drift_off_probability, mean_count, sample_decorated, sample_exponential_ppp, DecoratedParams,
};
use bbm_core::rng::derive_seed;
use bbm_core::stats::{
    estimate_c, laplace_functional_compare, lattice_control_runs, poissonianity_suite,
    ppp_control_runs, render_reports, StepFunction, SuiteParams, TestReport, ThinnedRun,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const SIMULATE: &[(&str, &str)] = &[
    ("horizon", "10"),
    ("replicas", "100"),
    ("offspring", "0,1"),
    ("barrier", "none"),
    ("checkpoints", ""),
    ("trees", "0"),
    ("thin_q", "0.5"),
    ("thin_floor", "-8"),
    ("node_cap", "20000000"),
];

pub const THIN: &[(&str, &str)] = &[
    ("trees_dir", ""),
    ("q_grid", "0.1,0.3,0.5,0.7,0.9"),
    ("y", "-3"),
    ("r_d", "3"),
    ("r_g", "3"),
    ("stability_points", "9"),
    ("matrix_cap", "4096"),
    ("triples", "true"),
];

pub const STATS: &[(&str, &str)] = &[
    ("source", "file"),
    ("input", ""),
    ("runs", ""),
    ("replicas", "2000"),
    ("c_hat", "auto"),
    ("c_lo", "1"),
    ("c_hi", "3"),
    ("c_points", "9"),
    ("k", "5"),
    ("y", "-1"),
    ("alpha", "0.01"),
    ("lattice_alpha", "1e-6"),
    ("controls_only", "false"),
    ("laplace", "true"),
    ("bootstrap", "1000"),
];

pub const DECORATED: &[(&str, &str)] = &[
    ("r", "4,8,12"),
    ("lambda", "1"),
    ("y", "0"),
    ("replicas", "1000"),
    ("atom_epsilon", "1e-7"),
    ("epsilon", "1e-7"),
    ("depth", "default"),
    ("samples", "1"),
];

pub const FKPP: &[(&str, &str)] = &[
    ("dx", "0.05"),
    ("dt_factor", "0.4"),
    ("t_final", "200"),
    ("offspring", "0,1"),
    ("levels", "1"),
    ("track_from", "20"),
    ("fit_lo", "20"),
    ("fit_hi", "200"),
    ("left", "-50"),
    ("right_pad", "100"),
    ("anchor_cdf", "none"),
    ("anchor_median", "none"),
    ("tail_lo", "1e-8"),
    ("tail_hi", "1e-2"),
];

pub const REPORT: &[(&str, &str)] = &[];

/// Default keys of a subcommand, or `None` if it does not exist.
pub fn defaults(command: &str) -> Option<&'static [(&'static str, &'static str)]> {
    Some(match command {
        "simulate" => SIMULATE,
        "thin" => THIN,
        "stats" => STATS,
        "cluster" | "tidal" => DECORATED,
        "fkpp" => FKPP,
        "report" => REPORT,
        _ => return None,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<String, CliError> {
    fs::create_dir_all(cfg.out_dir())?;
    match cfg.command.as_str() {
        "simulate" => simulate(cfg),
        "thin" => thin(cfg),
        "stats" => stats(cfg),
        "cluster" => cluster(cfg),
        "tidal" => tidal(cfg),
        "fkpp" => fkpp_cmd(cfg),
        "report" => report(cfg),
        other => Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads()?)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

/// Evaluate `f(0..n)` on the pool in chunks and hand results to `sink` in
/// index order, so file contents do not depend on scheduling.
pub fn run_ordered<T, F, S>(pool: &rayon::ThreadPool, n: usize, f: F, mut sink: S) -> Result<(), CliError>
where
    T: Send,
    F: Fn(usize) -> Result<T, CliError> + Sync + Send,
    S: FnMut(usize, T) -> Result<(), CliError>,
{
    let chunk = pool.current_num_threads() * 8;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let batch: Vec<Result<T, CliError>> =
            pool.install(|| (start..end).into_par_iter().map(&f).collect());
        for (i, r) in (start..end).zip(batch) {
            sink(i, r?)?;
        }
        start = end;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn write_json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn csv_preamble(cfg: &ExperimentConfig) -> Result<String, CliError> {
    Ok(format!("# config_hash={} seed={}\n", cfg.hash(), cfg.seed()?))
}

/// Merge `extra` into the config header.
fn with_header(cfg: &ExperimentConfig, extra: Value) -> Value {
    let mut head = cfg.header();
    if let (Some(h), Some(e)) = (head.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            h.insert(k.clone(), v.clone());
        }
    }
    head
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("missing input {}", path.display())))
    }
}

/// One run's `q`-thinned points above the stored floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinnedLine {
    pub seed: u64,
    pub z: f64,
    pub q: f64,
    pub points: Vec<f64>,
}

struct Replica {
    record: RunRecord,
    thinned: ThinnedLine,
    tree: Option<Vec<u8>>,
}

/// Insert `"config_hash"` into a tree file's JSON header line.
fn tag_tree_header(bytes: Vec<u8>, hash: &str) -> Vec<u8> {
    let Some(end) = bytes.iter().position(|&b| b == b'\n') else {
        return bytes;
    };
    let mut out = Vec::with_capacity(bytes.len() + 40);
    out.extend_from_slice(&bytes[..end - 1]);
    out.extend_from_slice(format!(",\"config_hash\":\"{hash}\"}}").as_bytes());
    out.extend_from_slice(&bytes[end..]);
    out
}

fn simulate(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let seed = cfg.seed()?;
    let replicas = cfg.usize("replicas")?;
    let mut base = SimConfig::new(cfg.f64("horizon")?, seed).with_offspring(cfg.offspring("offspring")?);
    if let Some(l) = cfg.opt_f64("barrier")? {
        base = base.with_barrier(l);
    }
    base = base.with_checkpoints(cfg.f64_list("checkpoints")?);
    base.node_cap = cfg.usize("node_cap")?;
    base.validate()?;
    let q = cfg.f64("thin_q")?;
    let floor = cfg.f64("thin_floor")?;
    let trees = cfg.usize("trees")?;
    let hash = cfg.hash();
    let out = cfg.out_dir();

    let mut runs = create(&out.join("runs.ndjson"))?;
    let mut thinned = create(&out.join("thinned.ndjson"))?;
    write_json_line(&mut runs, &cfg.header())?;
    write_json_line(&mut thinned, &with_header(cfg, json!({ "q": q, "floor": floor })))?;
    let pool = pool(cfg)?;
    run_ordered(
        &pool,
        replicas,
        |i| {
            let sim = base.clone().with_seed(derive_seed(seed, "replica", i as u64));
            let tree = simulate_tree(&sim)?;
            let record = RunRecord::from_tree(&tree, &hash)?;
            let config = leaf_configuration(&tree)?;
            let th = q_thinning_tree_with(&tree, &config, q)?;
            let tree_bytes = if i < trees {
                let mut buf = Vec::new();
                tree.write_ndjson(&mut buf)?;
                Some(tag_tree_header(buf, &hash))
            } else {
                None
            };
            Ok(Replica {
                thinned: ThinnedLine {
                    seed: tree.seed(),
                    z: record.z,
                    q,
                    points: th.above(floor),
                },
                record,
                tree: tree_bytes,
            })
        },
        |i, rep| {
            write_json_line(&mut runs, &rep.record)?;
            write_json_line(&mut thinned, &rep.thinned)?;
            if let Some(bytes) = rep.tree {
                let mut f = create(&out.join("trees").join(format!("tree_{i:06}.ndjson")))?;
                f.write_all(&bytes)?;
                f.flush()?;
            }
            Ok(())
        },
    )?;
    runs.flush()?;
    thinned.flush()?;
    Ok(format!(
        "simulate: {replicas} replicas at t = {} -> {} (config {hash})",
        base.horizon,
        out.display()
    ))
}

fn tree_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("missing tree directory {}", dir.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no tree files in {}", dir.display())));
    }
    Ok(files)
}

#[derive(Serialize)]
struct ThinLine<'a> {
    tree: &'a str,
    seed: u64,
    q: f64,
    selected_indices: &'a [usize],
    positions: &'a [f64],
}

struct TreeCheck {
    name: String,
    tree: BranchingTree,
    thinned: Vec<(f64, Vec<usize>, Vec<f64>)>,
    mismatches: usize,
    ultrametric: bool,
    stable: Option<bool>,
    gap: Option<bool>,
}

fn thin(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let dir = cfg.input_path("trees_dir", "trees");
    let files = tree_files(&dir)?;
    let grid = cfg.f64_list("q_grid")?;
    let y = cfg.f64("y")?;
    let (r_d, r_g) = (cfg.f64("r_d")?, cfg.f64("r_g")?);
    let points = cfg.usize("stability_points")?;
    let cap = cfg.usize("matrix_cap")?;
    let triples = cfg.bool("triples")?;
    let out = cfg.out_dir();
    let pool = pool(cfg)?;

    let mut lines = create(&out.join("thinned_trees.ndjson"))?;
    write_json_line(&mut lines, &with_header(cfg, json!({ "q_grid": grid })))?;
    let (mut instances, mut mismatches, mut non_ultrametric) = (0usize, 0usize, 0usize);
    let (mut stable_n, mut stable_hits, mut gap_n, mut gap_hits) = (0usize, 0usize, 0usize, 0usize);
    run_ordered(
        &pool,
        files.len(),
        |i| {
            let path = &files[i];
            let tree = BranchingTree::read_ndjson(BufReader::new(File::open(path)?))?;
            let config = leaf_configuration(&tree)?;
            let matrix = overlap_matrix_for(&tree, &config.leaf_ids, cap)?;
            let ultrametric = matrix.ultrametric() && (!triples || matrix.triples_ultrametric());
            let mut thinned = Vec::new();
            let mut bad = 0;
            for &q in &grid {
                let a = q_thinning_tree_with(&tree, &config, q)?;
                let b = q_thinning_matrix(&config, &matrix, q)?;
                if a != b {
                    bad += 1;
                }
                thinned.push((q, a.selected_indices, a.positions));
            }
            let t = tree.horizon();
            let stable = if r_d + r_g < t {
                Some(thinning_stable(&tree, &config, &q_grid(r_d / t, 1.0 - r_g / t, points), y)?)
            } else {
                None
            };
            let gap = check_gap_horizon(t, r_d, r_g)
                .ok()
                .map(|_| has_genealogical_gap(&tree, &config, y, r_d, r_g));
            Ok(TreeCheck {
                name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                tree,
                thinned,
                mismatches: bad,
                ultrametric,
                stable,
                gap,
            })
        },
        |_, c| {
            instances += 1;
            mismatches += c.mismatches;
            non_ultrametric += usize::from(!c.ultrametric);
            if let Some(s) = c.stable {
                stable_n += 1;
                stable_hits += usize::from(s);
            }
            if let Some(g) = c.gap {
                gap_n += 1;
                gap_hits += usize::from(g);
            }
            for (q, idx, pos) in &c.thinned {
                write_json_line(
                    &mut lines,
                    &ThinLine {
                        tree: &c.name,
                        seed: c.tree.seed(),
                        q: *q,
                        selected_indices: idx,
                        positions: pos,
                    },
                )?;
            }
            Ok(())
        },
    )?;
    lines.flush()?;
    let frac = |hits: usize, n: usize| if n == 0 { Value::Null } else { json!(hits as f64 / n as f64) };
    write_json(
        &out.join("thin_report.json"),
        &with_header(
            cfg,
            json!({
                "instances": instances,
                "q_grid": grid,
                "oracle_mismatches": mismatches,
                "oracle_equal": mismatches == 0,
                "non_ultrametric": non_ultrametric,
                "stability_fraction": frac(stable_hits, stable_n),
                "gap_fraction": frac(gap_hits, gap_n),
            }),
        ),
    )?;
    if mismatches > 0 || non_ultrametric > 0 {
        return Err(CliError::Failed(format!(
            "thin: {mismatches} tree/matrix mismatches, {non_ultrametric} non-ultrametric matrices"
        )));
    }
    Ok(format!("thin: {instances} trees, oracle equal on every q"))
}

fn read_thinned(path: &Path) -> Result<Vec<ThinnedRun>, CliError> {
    require(path)?;
    let mut lines = BufReader::new(File::open(path)?).lines();
    lines.next().transpose()?;
    let mut runs = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: ThinnedLine = serde_json::from_str(&line)?;
        runs.push(ThinnedRun { z: t.z, points: t.points });
    }
    Ok(runs)
}

fn stats(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let seed = cfg.seed()?;
    let k = cfg.usize("k")?;
    let y = cfg.f64("y")?;
    let alpha = cfg.f64("alpha")?;
    let controls_only = cfg.bool("controls_only")?;
    let auto_c = cfg.str("c_hat") == "auto";
    let (runs, c_est) = match cfg.str("source") {
        "file" => {
            let runs = read_thinned(&cfg.input_path("input", "thinned.ndjson"))?;
            let c_est = if auto_c {
                let path = cfg.input_path("runs", "runs.ndjson");
                require(&path)?;
                let (_, records) = read_records(BufReader::new(File::open(&path)?))?;
                let maxima: Vec<f64> = records.iter().map(|r| r.max_centered).collect();
                Some(estimate_c(&maxima, cfg.f64("c_lo")?, cfg.f64("c_hi")?, cfg.usize("c_points")?)?)
            } else {
                None
            };
            (runs, c_est)
        }
        "ppp" => {
            let c = if auto_c { 1.0 } else { cfg.f64("c_hat")? };
            let runs = (0..cfg.usize("replicas")?)
                .map(|i| {
                    let low = ((c / 60.0).ln() / SQRT2).min(y);
                    let s = sample_exponential_ppp(c, low, derive_seed(seed, "synthetic", i as u64))?;
                    Ok(ThinnedRun { z: 1.0, points: s.points })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            (runs, None)
        }
        other => return Err(CliError::Usage(format!("source must be file or ppp, got {other:?}"))),
    };
    let c_hat = match &c_est {
        Some(e) => e.c_hat,
        None if auto_c => 1.0,
        None => cfg.f64("c_hat")?,
    };
    let params = SuiteParams {
        k,
        y,
        ks_alpha: alpha,
        ..SuiteParams::new(c_hat)
    };
    let mut reports = Vec::new();
    if !controls_only {
        reports.extend(poissonianity_suite(&runs, &params)?);
        if cfg.bool("laplace")? {
            let phi = StepFunction::new(vec![(0.0, 1.0, 1.0)])?;
            let cmp = laplace_functional_compare(&runs, &phi, c_hat, cfg.usize("bootstrap")?, seed)?;
            reports.push(
                TestReport::new(
                    "laplace-functional",
                    cmp.relative_difference,
                    None,
                    cmp.relative_difference < 0.05 && cmp.intervals_overlap(),
                )
                .with_size("runs", cmp.runs)
                .with_size("excluded_z", cmp.excluded_z)
                .with_note(format!(
                    "lhs={} [{}, {}] rhs={} [{}, {}]",
                    cmp.lhs, cmp.lhs_interval.0, cmp.lhs_interval.1, cmp.rhs, cmp.rhs_interval.0, cmp.rhs_interval.1
                )),
            );
        }
    }
    let ppp = poissonianity_suite(&ppp_control_runs(&runs, c_hat, y, seed)?, &params)?;
    let mut control = ppp[0].clone();
    control.name = "control-ppp-ks".into();
    reports.push(control);
    let lattice_alpha = cfg.f64("lattice_alpha")?;
    let lattice = poissonianity_suite(&lattice_control_runs(&runs), &params)?;
    let mut negative = lattice[0].clone();
    negative.name = "control-lattice-ks".into();
    negative.passed = negative.p_value.is_some_and(|p| p < lattice_alpha);
    reports.push(negative.with_note(format!("passes when the lattice is rejected at p < {lattice_alpha}")));
    let hash = cfg.hash();
    for r in &mut reports {
        r.config_hash = hash.clone();
    }
    let out = cfg.out_dir();
    write_json(
        &out.join("stats_report.json"),
        &with_header(cfg, json!({ "c_hat": c_hat, "c_estimate": c_est, "reports": reports })),
    )?;
    let text = format!("{}{}", csv_preamble(cfg)?, render_reports(&reports));
    fs::write(out.join("stats_report.txt"), &text)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(text)
    } else {
        Err(CliError::Failed(format!("{text}failed: {}", failed.join(", "))))
    }
}

fn decorated_params(cfg: &ExperimentConfig, tidal: bool, r: f64) -> Result<DecoratedParams, CliError> {
    let (lambda, y) = (cfg.f64("lambda")?, cfg.f64("y")?);
    let mut p = if tidal {
        DecoratedParams::tidal(r, lambda, y)
    } else {
        DecoratedParams::cluster(r, lambda, y)
    };
    if cfg.str("depth") != "default" {
        p = p.with_depth(cfg.f64("depth")?);
    }
    Ok(p.with_atom_epsilon(cfg.f64("atom_epsilon")?).with_epsilon(cfg.f64("epsilon")?))
}

fn write_samples(cfg: &ExperimentConfig, params: &DecoratedParams, name: &str) -> Result<(), CliError> {
    let out = cfg.out_dir();
    for i in 0..cfg.usize("samples")? {
        let s = sample_decorated(params, derive_seed(cfg.seed()?, "sample", i as u64))?;
        let stem = format!("{name}_r{}_s{i}", params.r);
        let mut csv = create(&out.join(format!("{stem}.csv")))?;
        csv.write_all(csv_preamble(cfg)?.as_bytes())?;
        s.write_csv(&mut csv)?;
        csv.flush()?;
        let mut side = create(&out.join(format!("{stem}.json")))?;
        s.write_sidecar(&mut side, &cfg.header())?;
        side.write_all(b"\n")?;
        side.flush()?;
    }
    Ok(())
}

fn cluster(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let rs = cfg.f64_list("r")?;
    let replicas = cfg.usize("replicas")?;
    let seed = cfg.seed()?;
    let params: Vec<DecoratedParams> = rs
        .iter()
        .map(|&r| decorated_params(cfg, false, r))
        .collect::<Result<_, _>>()?;
    for p in &params {
        write_samples(cfg, p, "cluster")?;
    }
    let estimates = pool(cfg)?.install(|| {
        params
            .par_iter()
            .map(|p| mean_count(p, replicas, derive_seed(seed, "cluster-r", p.r.to_bits())))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut csv = create(&cfg.out_dir().join("cluster_means.csv"))?;
    csv.write_all(csv_preamble(cfg)?.as_bytes())?;
    writeln!(csv, "r,replicas,mean,stderr,observed_mean,lost_mean,neglected_mass,expected")?;
    for e in &estimates {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            f64_17(e.r),
            e.replicas,
            f64_17(e.mean),
            f64_17(e.stderr),
            f64_17(e.observed_mean),
            f64_17(e.lost_mean),
            f64_17(e.neglected_mass),
            f64_17(e.expected)
        )?;
    }
    csv.flush()?;
    let means: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
    let (lo, hi) = means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &m| (a.min(m), b.max(m)));
    Ok(format!("cluster: mean counts {means:?}, max/min ratio {:.4}", hi / lo))
}

fn tidal(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let rs = cfg.f64_list("r")?;
    let replicas = cfg.usize("replicas")?;
    let seed = cfg.seed()?;
    let params: Vec<DecoratedParams> = rs
        .iter()
        .map(|&r| decorated_params(cfg, true, r))
        .collect::<Result<_, _>>()?;
    for p in &params {
        write_samples(cfg, p, "tidal")?;
    }
    let estimates = pool(cfg)?.install(|| {
        params
            .par_iter()
            .map(|p| drift_off_probability(p, replicas, derive_seed(seed, "tidal-r", p.r.to_bits())))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut csv = create(&cfg.out_dir().join("tidal_drift_off.csv"))?;
    csv.write_all(csv_preamble(cfg)?.as_bytes())?;
    writeln!(csv, "r,replicas,hits,estimate,ci_low,ci_high,lost_mass,neglected_mass,upper_bound")?;
    for e in &estimates {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            f64_17(e.r),
            e.replicas,
            e.hits,
            f64_17(e.estimate),
            f64_17(e.ci_low),
            f64_17(e.ci_high),
            f64_17(e.lost_mass),
            f64_17(e.neglected_mass),
            f64_17(e.upper_bound)
        )?;
    }
    csv.flush()?;
    let monotone = estimates.windows(2).all(|w| w[1].estimate < w[0].estimate);
    let table: Vec<String> = estimates
        .iter()
        .map(|e| format!("r={} p={:.4} [{:.4}, {:.4}]", e.r, e.estimate, e.ci_low, e.ci_high))
        .collect();
    Ok(format!(
        "tidal: {} ({})",
        table.join("; "),
        if monotone { "decreasing in r" } else { "not decreasing in r" }
    ))
}

fn fkpp_cmd(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let solve = SolveConfig {
        dx: cfg.f64("dx")?,
        dt_factor: cfg.f64("dt_factor")?,
        t_final: cfg.f64("t_final")?,
        left: cfg.f64("left")?,
        right_pad: cfg.f64("right_pad")?,
        track_from: cfg.f64("track_from")?,
        offspring: cfg.offspring("offspring")?,
        ..SolveConfig::new(0.05, 200.0)
    };
    let (fit_lo, fit_hi) = (cfg.f64("fit_lo")?, cfg.f64("fit_hi")?);
    let run = fkpp::solve_front(&solve)?;
    let fit = fkpp::fit_front(&run.times, &run.fronts, fit_lo, fit_hi)?;
    let residual = fkpp::raw_residual(&run.profile, &solve.offspring);
    let (tail_lo, tail_hi) = (cfg.f64("tail_lo")?, cfg.f64("tail_hi")?);
    let tail = |a: Option<Anchor>| -> Result<Value, CliError> {
        Ok(match a {
            Some(a) => serde_json::to_value(fkpp::tail_fit(&run.profile, a, tail_lo, tail_hi)?)?,
            None => Value::Null,
        })
    };
    let levels = cfg.usize("levels")?;
    let mesh = if levels > 1 {
        let p = pool(cfg)?;
        p.install(|| fkpp::mesh_study(&solve, levels, fit_lo, fit_hi))?
    } else {
        Vec::new()
    };
    let out = cfg.out_dir();
    let pre = csv_preamble(cfg)?;
    let mut wave = create(&out.join("fkpp_wave.csv"))?;
    wave.write_all(pre.as_bytes())?;
    run.profile.write_csv(&mut wave)?;
    wave.flush()?;
    let mut front = create(&out.join("fkpp_front.csv"))?;
    front.write_all(pre.as_bytes())?;
    run.write_track_csv(&mut front)?;
    front.flush()?;
    write_json(
        &out.join("fkpp_report.json"),
        &with_header(
            cfg,
            json!({
                "fit": fit,
                "residual": residual,
                "convergence_gap": run.profile.convergence_gap,
                "converged": run.profile.convergence_gap.is_some_and(|g| g < fkpp::CONVERGENCE_TOL),
                "tail_fit_cdf_anchor": tail(cfg.opt_f64("anchor_cdf")?.map(Anchor::CdfAtZero))?,
                "tail_fit_median_anchor": tail(cfg.opt_f64("anchor_median")?.map(Anchor::Median))?,
                "mesh": mesh,
            }),
        ),
    )?;
    Ok(format!(
        "fkpp: speed {:.6}, log coefficient {:.4}, residual {:.3e}",
        fit.speed, fit.log_coefficient, residual
    ))
}

fn report(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let out = cfg.out_dir();
    let mut files: Vec<PathBuf> = fs::read_dir(&out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut text = csv_preamble(cfg)?;
    let mut failed = 0;
    for path in &files {
        let Ok(value) = serde_json::from_str::<Value>(&fs::read_to_string(path)?) else {
            continue;
        };
        let Some(hash) = value.get("config_hash").and_then(Value::as_str) else {
            continue;
        };
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        text.push_str(&format!("{name} (config {hash})\n"));
        if let Some(list) = value.get("reports") {
            let reports: Vec<TestReport> = serde_json::from_value(list.clone())?;
            failed += reports.iter().filter(|r| !r.passed).count();
            for line in render_reports(&reports).lines() {
                text.push_str(&format!("  {line}\n"));
            }
        }
        if value.get("oracle_equal") == Some(&Value::Bool(false)) {
            failed += 1;
            text.push_str("  [FAIL] thinning oracle\n");
        }
    }
    fs::write(out.join("report.txt"), &text)?;
    if failed > 0 {
        Err(CliError::Failed(format!("{text}{failed} failing tests")))
    } else {
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_header_gains_hash() {
        let bytes = b"{\"horizon\":1}\n{\"id\":0}\n".to_vec();
        let tagged = tag_tree_header(bytes, "abc");
        assert_eq!(
            String::from_utf8(tagged).unwrap(),
            "{\"horizon\":1,\"config_hash\":\"abc\"}\n{\"id\":0}\n"
        );
    }

    #[test]
    fn ordered_runner_preserves_order() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let mut seen = Vec::new();
        run_ordered(&pool, 100, |i| Ok(i * i), |i, v| {
            seen.push((i, v));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, (0..100).map(|i| (i, i * i)).collect::<Vec<_>>());
    }
}
