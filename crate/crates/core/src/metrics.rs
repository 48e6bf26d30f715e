//! Y-channel PSNR/SSIM and dataset evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{bicubic_resize, DatasetEntry, DatasetIndex, ImageRgb};
use crate::error::{Error, Result};
use crate::model::Network;

/// Smallest LR side a network is asked to upscale during evaluation.
pub const MIN_EVAL_SIDE: usize = 8;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Single-channel image on the 8-bit scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Luma {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Luma {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Data(format!("{height}x{width} luma needs {} values", height * width)));
        }
        Ok(Luma { height, width, data })
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    fn cropped(&self, crop: usize) -> Luma {
        let (h, w) = (self.height - 2 * crop, self.width - 2 * crop);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            data.extend_from_slice(&self.data[(y + crop) * self.width + crop..][..w]);
        }
        Luma { height: h, width: w, data }
    }
}

/// BT.601 studio-swing luma: 16 + 65.481 R + 128.553 G + 24.966 B.
pub fn rgb_to_y(img: &ImageRgb) -> Luma {
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| 16.0 + 65.481 * p[0] as f64 + 128.553 * p[1] as f64 + 24.966 * p[2] as f64)
        .collect();
    Luma { height: img.height(), width: img.width(), data }
}

fn crop_pair(a: &Luma, b: &Luma, crop: usize, min_side: usize, op: &str) -> Result<(Luma, Luma)> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::Data(format!(
            "{op}: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    if a.height < 2 * crop + min_side || a.width < 2 * crop + min_side {
        return Err(Error::Data(format!(
            "{op}: {}x{} image too small for crop {crop}",
            a.height, a.width
        )));
    }
    Ok((a.cropped(crop), b.cropped(crop)))
}

/// 10·log10(255²/MSE) after removing `crop` border pixels; +∞ for identical images.
pub fn psnr(a: &Luma, b: &Luma, crop: usize) -> Result<f64> {
    let (a, b) = crop_pair(a, b, crop, 1, "psnr")?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let r = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Valid-region separable filtering with the normalized Gaussian.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..][..w];
        for x in 0..ow {
            rows[y * ow + x] = g.iter().zip(&line[x..x + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (k, gk) in g.iter().enumerate() {
            let line = &rows[(y + k) * ow..][..ow];
            for (o, v) in out[y * ow..][..ow].iter_mut().zip(line) {
                *o += gk * v;
            }
        }
    }
    out
}

/// Mean SSIM over all 11×11 windows (σ = 1.5) fully inside the cropped image.
pub fn ssim(a: &Luma, b: &Luma, crop: usize) -> Result<f64> {
    let (a, b) = crop_pair(a, b, crop, WINDOW, "ssim")?;
    let (h, w) = (a.height, a.width);
    let g = gaussian_window();
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(&a.data, h, w, &g);
    let mu_b = filter_valid(&b.data, h, w, &g);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub scale: usize,
    pub crop: usize,
    pub per_image: Vec<ImageScore>,
    /// Images not evaluated, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    /// Mean over finite PSNRs; +∞ only when every image is identical.
    pub fn mean_psnr(&self) -> f64 {
        let finite: Vec<f64> = self.per_image.iter().map(|s| s.psnr).filter(|p| p.is_finite()).collect();
        if finite.is_empty() {
            return if self.per_image.is_empty() { f64::NAN } else { f64::INFINITY };
        }
        finite.iter().sum::<f64>() / finite.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.per_image.iter().map(|s| s.ssim).sum::<f64>() / self.per_image.len() as f64
    }

    /// Number of images whose PSNR was infinite and left out of the mean.
    pub fn identical_count(&self) -> usize {
        self.per_image.iter().filter(|s| s.psnr.is_infinite()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,psnr,ssim\n");
        for s in &self.per_image {
            writeln!(out, "{},{},{:.6}", s.name, fmt_db(s.psnr), s.ssim).unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut line = format!(
            "x{} crop {}: {} images, mean PSNR {} dB, mean SSIM {:.4}",
            self.scale,
            self.crop,
            self.per_image.len(),
            fmt_db(self.mean_psnr()),
            self.mean_ssim()
        );
        let identical = self.identical_count();
        if identical > 0 && identical < self.per_image.len() {
            write!(line, " ({identical} identical images excluded from PSNR mean)").unwrap();
        }
        if !self.skipped.is_empty() {
            write!(line, " ({} skipped)", self.skipped.len()).unwrap();
        }
        line
    }

    /// Writes the CSV followed by the summary as a trailing comment line.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, format!("{}# {}\n", self.to_csv(), self.summary()))?;
        Ok(())
    }
}

/// Clamp, round to 8 bits, then compare on Y with crop = scale.
pub fn score(sr: &ImageRgb, hr: &ImageRgb, scale: usize) -> Result<(f64, f64)> {
    let sr_y = rgb_to_y(&sr.clamped().quantized());
    let hr_y = rgb_to_y(hr);
    Ok((psnr(&sr_y, &hr_y, scale)?, ssim(&sr_y, &hr_y, scale)?))
}

fn side_by_side(images: &[&ImageRgb]) -> ImageRgb {
    let h = images.iter().map(|i| i.height()).max().unwrap_or(1);
    let w: usize = images.iter().map(|i| i.width()).sum();
    ImageRgb::from_fn(h, w, |y, x, c| {
        let mut x = x;
        for img in images {
            if x < img.width() {
                return if y < img.height() { img.get(y, x, c) } else { 0.0 };
            }
            x -= img.width();
        }
        0.0
    })
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Write bicubic / SR / HR side by side per image into this directory.
    pub triptych_dir: Option<PathBuf>,
    /// Images evaluated concurrently; 0 or 1 runs on the calling thread.
    pub workers: usize,
}

enum Outcome {
    Scored(ImageScore),
    Skipped(String, String),
}

fn evaluate_entry(
    entry: &DatasetEntry,
    scale: usize,
    opts: &EvalOptions,
    upscale: &(impl Fn(&ImageRgb) -> Result<ImageRgb> + Sync),
) -> Result<Outcome> {
    let name = entry.name();
    let lr = entry.load_lr(scale)?;
    if lr.height() < MIN_EVAL_SIDE || lr.width() < MIN_EVAL_SIDE {
        return Ok(Outcome::Skipped(name, format!("LR {}x{} below {MIN_EVAL_SIDE}px", lr.height(), lr.width())));
    }
    let hr = entry.load_hr()?;
    let sr = upscale(&lr)?;
    if sr.height() != hr.height() || sr.width() != hr.width() {
        return Err(Error::Data(format!(
            "{name}: output {}x{} does not match HR {}x{}",
            sr.height(),
            sr.width(),
            hr.height(),
            hr.width()
        )));
    }
    let (p, s) = score(&sr, &hr, scale)?;
    if let Some(dir) = &opts.triptych_dir {
        let bic = bicubic_resize(&lr, hr.height(), hr.width()).clamped();
        side_by_side(&[&bic, &sr.clamped(), &hr]).save_png(dir.join(format!("{name}.png")))?;
    }
    Ok(Outcome::Scored(ImageScore { name, psnr: p, ssim: s }))
}

/// Evaluates `upscale` on every entry with an LR cache at `scale`. Results
/// are reported in index order whatever the worker count.
pub fn evaluate_with(
    index: &DatasetIndex,
    scale: usize,
    opts: &EvalOptions,
    upscale: impl Fn(&ImageRgb) -> Result<ImageRgb> + Sync,
) -> Result<EvalReport> {
    let entries: Vec<&DatasetEntry> = index.for_scale(scale).collect();
    let workers = opts.workers.clamp(1, entries.len().max(1));
    let outcomes: Vec<Result<Outcome>> = if workers == 1 {
        entries.iter().map(|e| evaluate_entry(e, scale, opts, &upscale)).collect()
    } else {
        let mut slots: Vec<Option<Result<Outcome>>> = entries.iter().map(|_| None).collect();
        std::thread::scope(|s| {
            let chunk = entries.len().div_ceil(workers);
            for (es, out) in entries.chunks(chunk).zip(slots.chunks_mut(chunk)) {
                let upscale = &upscale;
                s.spawn(move || {
                    for (e, slot) in es.iter().zip(out) {
                        *slot = Some(evaluate_entry(e, scale, opts, upscale));
                    }
                });
            }
        });
        slots.into_iter().map(|o| o.expect("every slot is filled")).collect()
    };
    let mut report = EvalReport { scale, crop: scale, per_image: Vec::new(), skipped: Vec::new() };
    for outcome in outcomes {
        match outcome? {
            Outcome::Scored(s) => report.per_image.push(s),
            Outcome::Skipped(name, why) => report.skipped.push((name, why)),
        }
    }
    Ok(report)
}

/// Full-image forward per entry, no tiling.
pub fn evaluate(net: &Network<f32>, index: &DatasetIndex, scale: usize, opts: &EvalOptions) -> Result<EvalReport> {
    if net.config().scale != scale {
        return Err(Error::InvalidConfig(format!(
            "network upscales x{} but evaluation asked for x{scale}",
            net.config().scale
        )));
    }
    evaluate_with(index, scale, opts, |lr| {
        let out = net.forward(&lr.to_tensor())?;
        ImageRgb::from_tensor(&out, 0)
    })
}

pub fn evaluate_bicubic(index: &DatasetIndex, scale: usize, opts: &EvalOptions) -> Result<EvalReport> {
    evaluate_with(index, scale, opts, |lr| Ok(bicubic_resize(lr, lr.height() * scale, lr.width() * scale)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn y_of_primaries() {
        let img = ImageRgb::new(1, 3, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let y = rgb_to_y(&img);
        assert!((y.data[0] - 16.0).abs() < 1e-9);
        assert!((y.data[1] - 235.0).abs() < 1e-9);
        assert!((y.data[2] - 144.553).abs() < 1e-9);
    }

    #[test]
    fn psnr_unit_offset() {
        let a = Luma::new(10, 10, (0..100).map(|i| i as f64).collect()).unwrap();
        let b = Luma::new(10, 10, a.data.iter().map(|v| v + 1.0).collect()).unwrap();
        let p = psnr(&a, &b, 2).unwrap();
        assert!((p - 20.0 * 255f64.log10()).abs() < 1e-9);
        assert!((p - 48.1308).abs() < 1e-4);
        assert_eq!(psnr(&a, &a, 0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn crop_limits() {
        let a = Luma::new(10, 10, vec![0.0; 100]).unwrap();
        assert!(psnr(&a, &a, 5).is_err());
        assert!(psnr(&a, &a, 4).is_ok());
        assert!(ssim(&a, &a, 0).is_err());
        let b = Luma::new(9, 10, vec![0.0; 90]).unwrap();
        assert!(psnr(&a, &b, 0).is_err());
    }

    #[test]
    fn gaussian_is_normalized_and_symmetric() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..WINDOW {
            assert_eq!(g[i], g[WINDOW - 1 - i]);
        }
    }

    #[test]
    fn summary_excludes_infinite() {
        let report = EvalReport {
            scale: 2,
            crop: 2,
            per_image: vec![
                ImageScore { name: "a".into(), psnr: 30.0, ssim: 0.9 },
                ImageScore { name: "b".into(), psnr: f64::INFINITY, ssim: 1.0 },
            ],
            skipped: vec![],
        };
        assert_eq!(report.mean_psnr(), 30.0);
        assert!(report.to_csv().contains("b,inf,1.000000"));
        assert!(report.summary().contains("1 identical"));
    }
}
