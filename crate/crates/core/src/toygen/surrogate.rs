//! Cached quality map over `(α, β)` with bilinear lookup.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::ToyPipeline;
use super::task::TaskSpec;
use crate::costmodel::{denoise_steps, CompressionMode};
use crate::error::{Error, Result};
use crate::rng::{self, ids};
use crate::tokenmerge::LatentFeature;

#[derive(Debug, Clone, PartialEq)]
pub struct QualityTable {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Row-major over `(alpha, beta)`.
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QualityRow {
    pub alpha: f64,
    pub beta: f64,
    pub mean_mse: f64,
    pub std_err: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Alpha,
    Beta,
}

/// An adjacent cell pair that goes against the expected trend by more than
/// the allowed tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendViolation {
    pub axis: Axis,
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub excess: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub pairs_checked: usize,
    pub violations: Vec<TrendViolation>,
}

/// `n` evenly spaced points on `[0, 1]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn check_grid(name: &'static str, g: &[f64]) -> Result<()> {
    if g.is_empty() {
        return Err(Error::Empty(name));
    }
    if g.windows(2).any(|w| w[1] <= w[0]) || g.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(
            name,
            "grid must be increasing within [0, 1]",
        ));
    }
    Ok(())
}

/// Index of the lower bracketing node and the interpolation weight.
fn bracket(grid: &[f64], x: f64) -> (usize, f64) {
    if grid.len() == 1 || x <= grid[0] {
        return (0, 0.0);
    }
    let last = grid.len() - 1;
    if x >= grid[last] {
        return (last - 1, 1.0);
    }
    let i = grid.partition_point(|g| *g <= x) - 1;
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]))
}

impl QualityTable {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.betas.len() + j
    }

    pub fn cell(&self, i: usize, j: usize) -> f64 {
        self.mean[self.idx(i, j)]
    }

    /// Bilinear interpolation, clamped to the grid.
    pub fn at(&self, alpha: f64, beta: f64) -> f64 {
        let (i, ta) = bracket(&self.alphas, alpha);
        let (j, tb) = bracket(&self.betas, beta);
        let i1 = (i + 1).min(self.alphas.len() - 1);
        let j1 = (j + 1).min(self.betas.len() - 1);
        let lo = (1.0 - tb) * self.cell(i, j) + tb * self.cell(i, j1);
        let hi = (1.0 - tb) * self.cell(i1, j) + tb * self.cell(i1, j1);
        (1.0 - ta) * lo + ta * hi
    }

    pub fn argmin(&self) -> (f64, f64) {
        let k = (0..self.mean.len())
            .min_by(|&a, &b| self.mean[a].total_cmp(&self.mean[b]))
            .expect("non-empty table");
        (
            self.alphas[k / self.betas.len()],
            self.betas[k % self.betas.len()],
        )
    }

    pub fn max_mse(&self) -> f64 {
        self.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checks mse non-increasing in α and non-decreasing in β for every
    /// adjacent pair, allowing `z·√(se_a² + se_b²)`.
    pub fn trend_report(&self, z: f64) -> TrendReport {
        let mut report = TrendReport {
            pairs_checked: 0,
            violations: Vec::new(),
        };
        let mut check = |axis, a: (usize, usize), b: (usize, usize)| {
            let (ka, kb) = (self.idx(a.0, a.1), self.idx(b.0, b.1));
            let excess = match axis {
                Axis::Alpha => self.mean[kb] - self.mean[ka],
                Axis::Beta => self.mean[ka] - self.mean[kb],
            };
            let tolerance = z * (self.std_err[ka].powi(2) + self.std_err[kb].powi(2)).sqrt();
            report.pairs_checked += 1;
            if excess > tolerance {
                report.violations.push(TrendViolation {
                    axis,
                    from: (self.alphas[a.0], self.betas[a.1]),
                    to: (self.alphas[b.0], self.betas[b.1]),
                    excess,
                    tolerance,
                });
            }
        };
        for i in 0..self.alphas.len() {
            for j in 0..self.betas.len() {
                if i + 1 < self.alphas.len() {
                    check(Axis::Alpha, (i, j), (i + 1, j));
                }
                if j + 1 < self.betas.len() {
                    check(Axis::Beta, (i, j), (i, j + 1));
                }
            }
        }
        report
    }

    pub fn rows(&self) -> Vec<QualityRow> {
        let mut out = Vec::with_capacity(self.mean.len());
        for (i, &alpha) in self.alphas.iter().enumerate() {
            for (j, &beta) in self.betas.iter().enumerate() {
                let k = self.idx(i, j);
                out.push(QualityRow {
                    alpha,
                    beta,
                    mean_mse: self.mean[k],
                    std_err: self.std_err[k],
                    n: self.n[k],
                });
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Parses rows in `(alpha, beta)` row-major order.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = csv::Reader::from_reader(input)
            .deserialize::<QualityRow>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if rows.is_empty() {
            return Err(Error::Empty("quality table"));
        }
        let mut alphas: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
        alphas.dedup();
        let mut betas: Vec<f64> = Vec::new();
        for r in &rows {
            if r.alpha != rows[0].alpha {
                break;
            }
            betas.push(r.beta);
        }
        check_grid("alpha", &alphas)?;
        check_grid("beta", &betas)?;
        if rows.len() != alphas.len() * betas.len() {
            return Err(Error::Dimension {
                expected: alphas.len() * betas.len(),
                got: rows.len(),
            });
        }
        for (k, r) in rows.iter().enumerate() {
            if r.alpha != alphas[k / betas.len()] || r.beta != betas[k % betas.len()] {
                return Err(Error::Format {
                    what: "quality table",
                    reason: format!("row {k} is off the grid"),
                });
            }
        }
        Ok(QualityTable {
            alphas,
            betas,
            mean: rows.iter().map(|r| r.mean_mse).collect(),
            std_err: rows.iter().map(|r| r.std_err).collect(),
            n: rows.iter().map(|r| r.n).collect(),
        })
    }
}

/// Sweeps the pipeline over the grid with `n_samples` held-out prompts per
/// cell. Sample `k` uses the same prompt and link-noise stream in every
/// cell.
pub fn build_surrogate(
    pipeline: &ToyPipeline,
    alphas: &[f64],
    betas: &[f64],
    n_samples: usize,
    mode: CompressionMode,
    seed: u64,
) -> Result<QualityTable> {
    check_grid("alpha", alphas)?;
    check_grid("beta", betas)?;
    if n_samples == 0 {
        return Err(Error::Empty("sweep samples"));
    }
    let l_max = pipeline.desk.l_max;
    let tasks: Vec<TaskSpec> = (0..n_samples as u64)
        .map(|k| TaskSpec::new(seed.wrapping_mul(1 << 20).wrapping_add(k) | (1 << 41)))
        .collect();
    let refs = tasks
        .par_iter()
        .map(|t| pipeline.reference(t).map(|r| r.1))
        .collect::<Result<Vec<_>>>()?;
    let steps = alphas
        .iter()
        .map(|&a| denoise_steps(a, l_max))
        .collect::<Result<Vec<_>>>()?;
    let latents: Vec<Vec<LatentFeature>> = steps
        .par_iter()
        .map(|&s| {
            tasks
                .iter()
                .map(|t| pipeline.generate_steps(s, &mut t.noise_rng()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let var = pipeline.desk.noise_var();
    let cells: Vec<(usize, usize)> = (0..alphas.len())
        .flat_map(|i| (0..betas.len()).map(move |j| (i, j)))
        .collect();
    let stats = cells
        .par_iter()
        .map(|&(i, j)| {
            let samples = (0..n_samples)
                .map(|k| {
                    let mut r = rng::substream(seed, ids::SWEEP, k as u64);
                    pipeline.quality_sample(&latents[i][k], &refs[k], betas[j], mode, var, &mut r)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(mean_se(&samples))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QualityTable {
        alphas: alphas.to_vec(),
        betas: betas.to_vec(),
        mean: stats.iter().map(|s| s.0).collect(),
        std_err: stats.iter().map(|s| s.1).collect(),
        n: vec![n_samples; cells.len()],
    })
}
