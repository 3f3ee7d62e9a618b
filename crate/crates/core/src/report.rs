//! CSV and key-value artifacts.
//!
//! Reals are written with 17 significant digits so every value replays
//! bit-exactly; lines end in LF.

use crate::metrics::MetricReport;
use crate::trainer::IterationRecord;
use std::fmt::Write as _;

pub const METRICS_HEADER: &str =
    "step,loss_d,loss_g,d_real_mean,d_fake_mean,coeff,active_params,active_flops,toy_frechet,overfit_gap,modes_covered";

pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per iteration. Evaluation columns are filled on the row of the
/// iteration after which the evaluation ran, and left empty elsewhere.
pub fn metrics_csv(records: &[IterationRecord], reports: &[MetricReport]) -> String {
    let mut out = String::with_capacity(records.len() * 200);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    let mut reports = reports.iter().peekable();
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step,
            real(r.loss_d),
            real(r.loss_g),
            real(r.d_real_mean),
            real(r.d_fake_mean),
            real(r.coeff),
            r.active_params,
            r.active_flops
        );
        match reports.peek() {
            Some(m) if m.step == r.step + 1 => {
                let _ = write!(out, ",{},{},{}", real(m.toy_frechet), real(m.overfit_gap), m.modes_covered);
                reports.next();
            }
            _ => out.push_str(",,,"),
        }
        out.push('\n');
    }
    out
}

/// Final evaluation values recovered from a metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalMetrics {
    pub step: u64,
    pub toy_frechet: f64,
    pub overfit_gap: f64,
    pub modes_covered: usize,
}

/// The last row carrying evaluation columns, if any.
pub fn final_metrics_from_csv(text: &str) -> Option<FinalMetrics> {
    text.lines().rev().filter(|l| !l.starts_with("step,")).find_map(|line| {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 11 || cols[8].is_empty() {
            return None;
        }
        Some(FinalMetrics {
            step: cols[0].parse().ok()?,
            toy_frechet: cols[8].parse().ok()?,
            overfit_gap: cols[9].parse().ok()?,
            modes_covered: cols[10].parse().ok()?,
        })
    })
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64) -> IterationRecord {
        IterationRecord {
            step,
            loss_d: 1.0 / 3.0,
            loss_g: 0.1,
            d_real_mean: 0.5,
            d_fake_mean: 0.25,
            coeff: -0.5,
            active_params: 10,
            active_flops: 20,
        }
    }

    fn report(step: u64, fd: f64) -> MetricReport {
        MetricReport {
            step,
            toy_frechet: fd,
            overfit_gap: -0.5,
            modes_covered: 7,
            generated_samples: 1024,
            reference_samples: 1024,
        }
    }

    #[test]
    fn reals_replay_exactly() {
        for v in [1.0 / 3.0, 1e-300, -2.5e17, std::f64::consts::PI] {
            assert_eq!(real(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn csv_layout() {
        let csv = metrics_csv(&[record(0), record(1), record(2)], &[report(2, 0.75)]);
        let lines: Vec<&str> = csv.split('\n').collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert!(lines[1].ends_with(",,,"));
        assert!(lines[2].ends_with(",7"));
        assert_eq!(lines.len(), 5);
        assert!(!csv.contains('\r'));
        let f = final_metrics_from_csv(&csv).unwrap();
        assert_eq!((f.step, f.toy_frechet, f.modes_covered), (1, 0.75, 7));
    }

    #[test]
    fn mean_and_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
