//! Cross-run comparison and the per-method cost table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use megsim::channel::{achievable_rate, mean_gain};
use megsim::costmodel::{denoise_steps, payload_bits};
use megsim::{CompressionMode, Error, Result, SystemParams};
use serde::Serialize;

use crate::commands::{SummaryRow, SUMMARY};
use crate::rundir::{open_verified, read_listed, Manifest, RunDir};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub summary: SummaryRow,
    /// Differences against the first run.
    pub diff_mean_mse: f64,
    pub diff_mean_d: f64,
    pub diff_mean_e: f64,
    pub diff_viol_d_rate: f64,
}

pub fn collect(runs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    if runs.is_empty() {
        return Err(Error::Empty("report inputs"));
    }
    let mut rows: Vec<ReportRow> = Vec::new();
    for dir in runs {
        let m = open_verified(dir)?;
        for summary in read_summaries(dir, &m)? {
            rows.push(ReportRow {
                run: dir.display().to_string(),
                summary,
                diff_mean_mse: 0.0,
                diff_mean_d: 0.0,
                diff_mean_e: 0.0,
                diff_viol_d_rate: 0.0,
            });
        }
    }
    let base = rows[0].summary.clone();
    for r in &mut rows {
        r.diff_mean_mse = r.summary.mean_mse - base.mean_mse;
        r.diff_mean_d = r.summary.mean_d - base.mean_d;
        r.diff_mean_e = r.summary.mean_e - base.mean_e;
        r.diff_viol_d_rate = r.summary.viol_d_rate - base.viol_d_rate;
    }
    Ok(rows)
}

fn read_summaries(dir: &Path, m: &Manifest) -> Result<Vec<SummaryRow>> {
    let bytes = read_listed(dir, m, SUMMARY)?;
    let mut r = csv::Reader::from_reader(&bytes[..]);
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<SummaryRow>, _>>()?;
    if rows.is_empty() {
        return Err(Error::Empty("eval summary"));
    }
    Ok(rows)
}

/// Pixels per latent token along each side of the full-resolution image.
pub const IMAGE_SIDE_FACTOR: usize = 16;
/// Colour channels of the generated image.
pub const IMAGE_CHANNELS: usize = 3;

/// One method of the comparison table, at the fading-free mean gain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub method: String,
    pub steps: usize,
    pub beta: f64,
    pub payload_bits: u64,
    pub d_tr: f64,
    pub d_comp: f64,
    pub d_total: f64,
}

/// Methods compared: centralized generation with an image download, the
/// plain split, split with pruning, and the merging scheme at two depths.
pub fn cost_table(p: &SystemParams) -> Result<Vec<CostRow>> {
    let h = mean_gain(p.dist, p);
    let rate = achievable_rate(h, p);
    let l8 = denoise_steps(8.0 / p.l_max as f64, p.l_max)?;
    let l4 = denoise_steps(4.0 / p.l_max as f64, p.l_max)?;
    let unet = |steps: usize, factor: f64| p.o_e + steps as f64 * p.o_unet * factor;
    let image_bits = (IMAGE_CHANNELS * (IMAGE_SIDE_FACTOR * p.d_w) * (IMAGE_SIDE_FACTOR * p.d_h))
        as u64
        * p.bits as u64;
    let row = |method: &str, steps: usize, beta: f64, bits: u64, d_comp: f64| {
        let d_tr = bits as f64 / rate;
        CostRow {
            method: method.to_string(),
            steps,
            beta,
            payload_bits: bits,
            d_tr,
            d_comp,
            d_total: d_tr + d_comp,
        }
    };
    let device = p.o_d * p.t_ue;
    let mut out = vec![row(
        "centralized",
        p.l_max,
        0.0,
        image_bits,
        (unet(p.l_max, 1.0) + p.o_d) * p.t_es,
    )];
    let full = payload_bits(0.0, CompressionMode::Prune, p)?;
    out.push(row(
        "split-finetune",
        l8,
        0.0,
        full,
        unet(l8, 1.0) * p.t_es + device,
    ));
    let f = p.compute_merge_factor;
    out.push(row(
        "pruning",
        l8,
        0.1,
        payload_bits(0.1, CompressionMode::Prune, p)?,
        unet(l8, f) * p.t_es + device,
    ));
    for steps in [l8, l4] {
        out.push(row(
            "merging",
            steps,
            0.5,
            payload_bits(0.5, CompressionMode::Merge, p)?,
            unet(steps, f) * p.t_es + device,
        ));
    }
    Ok(out)
}

/// Latency-reduction claims evaluated on the cost table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Claim {
    pub method: String,
    pub steps: usize,
    pub versus: String,
    pub reduction: f64,
    pub claimed_at_least: f64,
    pub holds: bool,
}

pub fn claims(table: &[CostRow]) -> Vec<Claim> {
    let find = |m: &str| {
        table
            .iter()
            .find(|r| r.method == m)
            .expect("method in table")
    };
    let mut out = Vec::new();
    for r in table.iter().filter(|r| r.method == "merging") {
        for (versus, bar) in [("centralized", 0.9), ("split-finetune", 0.4)] {
            let reduction = 1.0 - r.d_total / find(versus).d_total;
            out.push(Claim {
                method: r.method.clone(),
                steps: r.steps,
                versus: versus.to_string(),
                reduction,
                claimed_at_least: bar,
                holds: reduction > bar,
            });
        }
    }
    out
}

fn report_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record([
        "run",
        "method",
        "mode",
        "d_max",
        "e_max",
        "steps",
        "mean_reward",
        "mean_mse",
        "mean_d",
        "mean_d_tr",
        "mean_d_comp",
        "mean_e",
        "viol_d_rate",
        "viol_e_rate",
        "mean_alpha",
        "mean_beta",
        "diff_mean_mse",
        "diff_mean_d",
        "diff_mean_e",
        "diff_viol_d_rate",
    ])?;
    for r in rows {
        let m = &r.summary;
        let nums = [
            m.d_max,
            m.e_max,
            m.steps as f64,
            m.mean_reward,
            m.mean_mse,
            m.mean_d,
            m.mean_d_tr,
            m.mean_d_comp,
            m.mean_e,
            m.viol_d_rate,
            m.viol_e_rate,
            m.mean_alpha,
            m.mean_beta,
            r.diff_mean_mse,
            r.diff_mean_d,
            r.diff_mean_e,
            r.diff_viol_d_rate,
        ];
        let mut rec = vec![r.run.clone(), m.method.clone(), m.mode.clone()];
        rec.extend(nums.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Format {
        what: "csv",
        reason: e.to_string(),
    })
}

fn csv_of<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Format {
        what: "csv",
        reason: e.to_string(),
    })
}

pub fn render(rows: &[ReportRow], costs: &[CostRow], claims: &[Claim]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>6} {:>8} {:>9} {:>9} {:>9} {:>9} {:>8} {:>8}  run",
        "method", "D_max", "mse", "D_tr", "D_comp", "E", "D", "viol_D", "viol_E"
    );
    for r in rows {
        let m = &r.summary;
        let _ = writeln!(
            s,
            "{:<12} {:>6} {:>8.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8.3} {:>8.3}  {}",
            m.method,
            m.d_max,
            m.mean_mse,
            m.mean_d_tr,
            m.mean_d_comp,
            m.mean_e,
            m.mean_d,
            m.viol_d_rate,
            m.viol_e_rate,
            r.run
        );
    }
    let _ = writeln!(s, "\ncost model at the mean channel gain");
    let _ = writeln!(
        s,
        "{:<15} {:>3} {:>5} {:>10} {:>9} {:>9} {:>9}",
        "method", "L", "beta", "bits", "D_tr", "D_comp", "D"
    );
    for c in costs {
        let _ = writeln!(
            s,
            "{:<15} {:>3} {:>5} {:>10} {:>9.4} {:>9.4} {:>9.4}",
            c.method, c.steps, c.beta, c.payload_bits, c.d_tr, c.d_comp, c.d_total
        );
    }
    for c in claims {
        let _ = writeln!(
            s,
            "{} L={} vs {}: {:.1}% latency reduction (claimed > {:.0}%): {}",
            c.method,
            c.steps,
            c.versus,
            100.0 * c.reduction,
            100.0 * c.claimed_at_least,
            if c.holds { "holds" } else { "does not hold" }
        );
    }
    s
}

pub struct ReportOutput {
    pub rows: Vec<ReportRow>,
    pub text: String,
}

pub fn write(dir: &mut RunDir, runs: &[PathBuf], params: &SystemParams) -> Result<ReportOutput> {
    let rows = collect(runs)?;
    let costs = cost_table(params)?;
    let cl = claims(&costs);
    let text = render(&rows, &costs, &cl);
    dir.write("report.csv", &report_csv(&rows)?)?;
    dir.write("cost_table.csv", &csv_of(&costs)?)?;
    dir.write("claims.csv", &csv_of(&cl)?)?;
    dir.write("report.txt", text.as_bytes())?;
    Ok(ReportOutput { rows, text })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centralized_download_is_48_latents() {
        let p = SystemParams::default();
        let t = cost_table(&p).unwrap();
        assert_eq!(t[0].payload_bits, 48 * t[1].payload_bits);
        assert_eq!(t[1].payload_bits, 1_048_576);
        assert_eq!(t[3].payload_bits, 557_056);
        assert_eq!((t[3].steps, t[4].steps), (8, 4));
    }

    #[test]
    fn merging_is_cheaper_than_the_split() {
        let t = cost_table(&SystemParams::default()).unwrap();
        for c in claims(&t) {
            assert!(c.reduction > 0.0, "{c:?}");
        }
    }
}
