//! Image similarity: mean squared error, Pearson correlation, and SSIM.

use crate::error::{Error, Result};
use crate::image::Image;

/// Windowed SSIM parameters. Intensities are assumed to span
/// `dynamic_range`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    /// Side of the square Gaussian window; must be odd.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|t| t / total).collect()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// MSE, PCC and SSIM of one reconstruction against its stimulus.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricTriple {
    pub mse: f64,
    pub pcc: f64,
    pub ssim: f64,
}

impl MetricTriple {
    pub fn between(a: &Image, b: &Image, ssim_config: &SsimConfig) -> Result<Self> {
        Ok(Self {
            mse: mse(a, b)?,
            pcc: pcc(a, b)?,
            ssim: ssim_with(a, b, ssim_config)?,
        })
    }

    /// Like [`MetricTriple::between`] but reports an undefined correlation
    /// (a constant image) as `NaN` instead of failing.
    pub fn between_lenient(a: &Image, b: &Image, ssim_config: &SsimConfig) -> Result<Self> {
        Ok(Self {
            mse: mse(a, b)?,
            pcc: match pcc(a, b) {
                Err(Error::UndefinedCorrelation(_)) => f64::NAN,
                other => other?,
            },
            ssim: ssim_with(a, b, ssim_config)?,
        })
    }
}

fn same_shape(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::dim(op, &[a.height(), a.width()], &[b.height(), b.width()]));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape("mse", a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// Sample Pearson correlation of the flattened pixels.
pub fn pcc(a: &Image, b: &Image) -> Result<f64> {
    same_shape("pcc", a, b)?;
    let (x, y) = (a.to_f64(), b.to_f64());
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &q) in x.iter().zip(&y) {
        let (dx, dy) = (p - mx, q - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("an image is constant".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// SSIM with the default 7×7, σ = 1.5 window.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, &SsimConfig::default())
}

/// Gaussian-weighted SSIM averaged over every window position lying fully
/// inside the image.
pub fn ssim_with(a: &Image, b: &Image, config: &SsimConfig) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (w, h, win) = (a.width(), a.height(), config.window);
    if win == 0 || win % 2 == 0 {
        return Err(Error::Config(format!("SSIM window {win} must be odd")));
    }
    if win > w || win > h {
        return Err(Error::dim("ssim window larger than image", &[h, w], &[win, win]));
    }
    let taps = config.taps();
    let (x, y) = (a.to_f64(), b.to_f64());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let filt = |img: &[f64]| separable_valid(img, w, h, &taps);
    let (mx, my, exx, eyy, exy) = (filt(&x), filt(&y), filt(&xx), filt(&yy), filt(&xy));
    let (c1, c2) = (config.c1(), config.c2());

    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ma, mb) = (mx[i], my[i]);
            let va = exx[i] - ma * ma;
            let vb = eyy[i] - mb * mb;
            let cov = exy[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Valid-mode separable filtering: rows first, then columns.
fn separable_valid(img: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (wo, ho) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; h * wo];
    for r in 0..h {
        for c in 0..wo {
            rows[r * wo + c] = taps.iter().enumerate().map(|(t, &g)| g * img[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for r in 0..ho {
        for c in 0..wo {
            out[r * wo + c] = taps.iter().enumerate().map(|(t, &g)| g * rows[(r + t) * wo + c]).sum();
        }
    }
    out
}
