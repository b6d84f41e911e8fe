//! The derivative martingale `Z(s)` and the second-order sum `Z2(s)`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::bbm_sim::{leaf_configuration, BranchingTree, SQRT2};
use crate::error::{LabError, Result};

/// Exponents below this are flushed to zero.
pub const UNDERFLOW_EXPONENT: f64 = -700.0;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    correction: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.correction += (self.sum - t) + x;
        } else {
            self.correction += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.correction
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleSums {
    pub z: f64,
    pub z2: f64,
    /// Terms whose exponent fell below [`UNDERFLOW_EXPONENT`].
    pub flushed: usize,
}

/// `Z` and `Z2` for raw positions at time `s`.
pub fn martingale_sums(positions: &[f64], s: f64) -> MartingaleSums {
    let mut z = CompensatedSum::default();
    let mut z2 = CompensatedSum::default();
    let mut flushed = 0;
    for &x in positions {
        let gap = SQRT2 * s - x;
        let exponent = -SQRT2 * gap;
        if exponent < UNDERFLOW_EXPONENT {
            flushed += 1;
            continue;
        }
        let w = exponent.exp();
        z.add(gap * w);
        z2.add(gap * gap * w * w);
    }
    MartingaleSums {
        z: z.value(),
        z2: z2.value(),
        flushed,
    }
}

pub fn derivative_martingale(tree: &BranchingTree, s: f64) -> Result<f64> {
    Ok(martingale_sums(&tree.positions_at(s)?, s).z)
}

pub fn second_order_sum(tree: &BranchingTree, s: f64) -> Result<f64> {
    Ok(martingale_sums(&tree.positions_at(s)?, s).z2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub z: f64,
    pub z2: f64,
}

/// Per-replica summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub horizon: f64,
    pub z: f64,
    pub z2: f64,
    pub max_centered: f64,
    pub leaf_count: usize,
    pub pruned_count: usize,
    pub flushed: usize,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<TrajectoryPoint>,
}

impl RunRecord {
    /// Summarize `tree`, with `Z` and `Z2` also evaluated at every checkpoint.
    pub fn from_tree(tree: &BranchingTree, config_hash: &str) -> Result<Self> {
        let config = leaf_configuration(tree)?;
        let t = tree.horizon();
        let at_horizon = martingale_sums(&tree.positions_at(t)?, t);
        let trajectory = tree
            .checkpoints()
            .iter()
            .map(|c| {
                let m = martingale_sums(&c.positions, c.time);
                TrajectoryPoint {
                    time: c.time,
                    z: m.z,
                    z2: m.z2,
                }
            })
            .collect();
        Ok(Self {
            seed: tree.seed(),
            horizon: t,
            z: at_horizon.z,
            z2: at_horizon.z2,
            max_centered: config.positions[0],
            leaf_count: config.len(),
            pruned_count: tree.pruned_count(),
            flushed: at_horizon.flushed,
            config_hash: config_hash.to_string(),
            trajectory,
        })
    }
}

/// Write a results file: one JSON header line, then one record per line.
pub fn write_records<W: Write, H: Serialize>(
    mut out: W,
    header: &H,
    records: &[RunRecord],
) -> Result<()> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a results file written by [`write_records`]; returns the raw header.
pub fn read_records<R: BufRead>(input: R) -> Result<(serde_json::Value, Vec<RunRecord>)> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(LabError::Parse("empty results file".into())),
    };
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbm_sim::{simulate_tree, SimConfig};

    #[test]
    fn single_particle_on_the_line() {
        let m = martingale_sums(&[SQRT2 * 3.0], 3.0);
        assert_eq!(m.z, 0.0);
        assert_eq!(m.z2, 0.0);
    }

    #[test]
    fn single_particle_one_below() {
        let m = martingale_sums(&[SQRT2 * 3.0 - 1.0], 3.0);
        assert!((m.z - 0.243_116_734_434_214_2).abs() < 1e-12);
        assert!((m.z2 - 0.059_105_746_561_956_2).abs() < 1e-12);
    }

    #[test]
    fn deep_particles_are_flushed() {
        let m = martingale_sums(&[-1000.0, SQRT2 - 1.0], 1.0);
        assert_eq!(m.flushed, 1);
        assert!((m.z - (-SQRT2).exp()).abs() < 1e-15);
    }

    #[test]
    fn compensation_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-16).abs() < 1e-30);
    }

    #[test]
    fn checkpoint_at_horizon_matches_leaves() {
        let base = SimConfig::new(6.0, 3);
        let plain = simulate_tree(&base).unwrap();
        let with_cp = simulate_tree(&base.clone().with_checkpoints(vec![3.0, 6.0])).unwrap();
        let leaves: Vec<f64> = with_cp
            .leaf_ids()
            .iter()
            .map(|&id| with_cp.node(id).end_position)
            .collect();
        let a = martingale_sums(&leaves, 6.0).z;
        let b = derivative_martingale(&with_cp, 6.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(derivative_martingale(&plain, 3.0).is_err());
        assert!(derivative_martingale(&with_cp, 3.0).is_ok());
    }

    #[test]
    fn z_positive_on_binary_runs() {
        for seed in 0..50 {
            let tree = simulate_tree(&SimConfig::new(5.0, seed)).unwrap();
            assert!(derivative_martingale(&tree, 5.0).unwrap() > 0.0);
            assert!(second_order_sum(&tree, 5.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn records_round_trip() {
        let tree = simulate_tree(&SimConfig::new(4.0, 9).with_checkpoints(vec![2.0, 4.0])).unwrap();
        let rec = RunRecord::from_tree(&tree, "abc").unwrap();
        assert_eq!(rec.trajectory.len(), 2);
        assert_eq!(rec.trajectory[1].z, rec.z);
        let mut buf = Vec::new();
        write_records(&mut buf, &serde_json::json!({"kind": "test"}), &[rec.clone()]).unwrap();
        let (header, back) = read_records(&buf[..]).unwrap();
        assert_eq!(header["kind"], "test");
        assert_eq!(back, vec![rec]);
    }
}
