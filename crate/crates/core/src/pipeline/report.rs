use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CrossValidation, ReconstructionResult};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::MetricTriple;

/// Mean and sample standard deviation of a set of metric triples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricSummary {
    pub count: usize,
    pub mean: MetricTriple,
    pub std: MetricTriple,
}

impl MetricSummary {
    pub fn of(items: impl IntoIterator<Item = MetricTriple>) -> Self {
        let items: Vec<MetricTriple> = items.into_iter().collect();
        let n = items.len();
        if n == 0 {
            return Self::default();
        }
        let stat = |get: fn(&MetricTriple) -> f64| {
            let mean = items.iter().map(get).sum::<f64>() / n as f64;
            let var = if n > 1 {
                items.iter().map(|m| (get(m) - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            (mean, var.sqrt())
        };
        let (mse, pcc, ssim) = (stat(|m| m.mse), stat(|m| m.pcc), stat(|m| m.ssim));
        Self {
            count: n,
            mean: MetricTriple {
                mse: mse.0,
                pcc: pcc.0,
                ssim: ssim.0,
            },
            std: MetricTriple {
                mse: mse.1,
                pcc: pcc.1,
                ssim: ssim.1,
            },
        }
    }
}

fn row(out: &mut String, name: &str, m: &MetricTriple) {
    writeln!(out, "{name},{:.6},{:.6},{:.6}", m.mse, m.pcc, m.ssim).expect("write to String");
}

/// `fold,mse,pcc,ssim` table: one row per fold (means over its held-out
/// samples), then `mean` and `std` rows over all samples.
pub fn format_metric_table(
    samples: &[ReconstructionResult],
    folds: usize,
    pick: fn(&ReconstructionResult) -> MetricTriple,
) -> String {
    let mut out = String::from("fold,mse,pcc,ssim\n");
    for f in 0..folds {
        let s = MetricSummary::of(samples.iter().filter(|r| r.fold == f).map(pick));
        row(&mut out, &f.to_string(), &s.mean);
    }
    let all = MetricSummary::of(samples.iter().map(pick));
    row(&mut out, "mean", &all.mean);
    row(&mut out, "std", &all.std);
    out
}

/// Single-line summary in the column order MSE, PCC, SSIM.
pub fn table2_row(method: &str, summary: &MetricSummary) -> String {
    format!(
        "{method:<16}{:>8.3}{:>8.3}{:>8.3}",
        summary.mean.mse, summary.mean.pcc, summary.mean.ssim
    )
}

impl CrossValidation {
    /// Metric table of the voxel-based reconstructions.
    pub fn predicted_table(&self) -> String {
        format_metric_table(&self.samples, self.folds.len(), |r| r.predicted_metrics)
    }

    /// Metric table of the theoretical reconstructions.
    pub fn theoretical_table(&self) -> String {
        format_metric_table(&self.samples, self.folds.len(), |r| r.theoretical_metrics)
    }

    /// One row per sample with labels, chosen classes and both metric sets.
    pub fn sample_table(&self) -> String {
        let mut out = String::from(
            "sample,fold,label,chosen_class,theoretical_class,pred_mse,pred_pcc,pred_ssim,theory_mse,theory_pcc,theory_ssim\n",
        );
        for r in &self.samples {
            let (p, t) = (r.predicted_metrics, r.theoretical_metrics);
            writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.sample, r.fold, r.label, r.chosen_class, r.theoretical_class, p.mse, p.pcc, p.ssim, t.mse, t.pcc, t.ssim
            )
            .expect("write to String");
        }
        out
    }

    /// Header plus the rows for the voxel-based and theoretical results.
    pub fn table2(&self) -> String {
        format!(
            "{:<16}{:>8}{:>8}{:>8}\n{}\n{}\n",
            "method",
            "MSE",
            "PCC",
            "SSIM",
            table2_row("CNAVR", &self.predicted),
            table2_row("theoretical", &self.theoretical)
        )
    }
}

/// Binary PGM (`P5`, maxval 255); intensities are clamped to `[0, 1]`.
pub fn write_pgm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    bytes.extend(image.pixels().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `<sample>_stim.pgm`, `<sample>_theory.pgm` and `<sample>_pred.pgm`
/// for every result, the sample index zero-padded to three digits.
pub fn write_reconstructions(dir: impl AsRef<Path>, results: &[ReconstructionResult]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in results {
        write_pgm(dir.join(format!("{:03}_stim.pgm", r.sample)), &r.stimulus)?;
        write_pgm(dir.join(format!("{:03}_theory.pgm", r.sample)), &r.theoretical)?;
        write_pgm(dir.join(format!("{:03}_pred.pgm", r.sample)), &r.predicted)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(v: f64) -> MetricTriple {
        MetricTriple {
            mse: v,
            pcc: 1.0 - v,
            ssim: 0.5,
        }
    }

    #[test]
    fn summary_statistics() {
        let s = MetricSummary::of([triple(1.0), triple(2.0), triple(3.0)]);
        assert_eq!(s.count, 3);
        assert!((s.mean.mse - 2.0).abs() < 1e-15);
        assert!((s.std.mse - 1.0).abs() < 1e-15);
        assert_eq!(s.std.ssim, 0.0);
        assert_eq!(MetricSummary::of([]).count, 0);
    }

    #[test]
    fn table_row_format() {
        let s = MetricSummary::of([MetricTriple {
            mse: 0.042,
            pcc: 0.769,
            ssim: 0.75,
        }]);
        assert_eq!(table2_row("CNAVR", &s), "CNAVR              0.042   0.769   0.750");
    }

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        write_pgm(&p, &Image::new(2, 1, vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"P5\n2 1\n255\n\x00\xff");
    }
}
