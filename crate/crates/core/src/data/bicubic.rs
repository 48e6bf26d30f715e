use super::image::ImageRgb;

/// Source taps and normalized weights for one output sample along an axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Contribution {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Reflects an out-of-range (1-based) coordinate back into [1, len], the
/// half-sample symmetric extension used by MATLAB's imresize.
fn mirror(i: i64, len: usize) -> usize {
    let n = len as i64;
    let period = 2 * n;
    let r = (i - 1).rem_euclid(period);
    (if r < n { r } else { period - 1 - r }) as usize
}

/// Per-output resampling taps for an axis of `in_len` samples scaled by
/// `scale`, with the kernel widened by 1/scale when shrinking.
pub fn resample_weights(in_len: usize, out_len: usize, scale: f64) -> Vec<Contribution> {
    let shrinking = scale < 1.0;
    let width = if shrinking { 4.0 / scale } else { 4.0 };
    let taps = width.ceil() as i64 + 2;
    (1..=out_len)
        .map(|x| {
            let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - width / 2.0).floor() as i64;
            let mut indices = Vec::with_capacity(taps as usize);
            let mut weights = Vec::with_capacity(taps as usize);
            for j in 0..taps {
                let idx = left + j;
                let d = u - idx as f64;
                let w = if shrinking { scale * cubic(scale * d) } else { cubic(d) };
                if w != 0.0 {
                    indices.push(mirror(idx, in_len));
                    weights.push(w);
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            Contribution { indices, weights }
        })
        .collect()
}

fn resize_axis(src: &[f64], h: usize, w: usize, contribs: &[Contribution], along_height: bool) -> Vec<f64> {
    let (oh, ow) = if along_height { (contribs.len(), w) } else { (h, contribs.len()) };
    let mut out = vec![0.0; oh * ow * 3];
    for y in 0..oh {
        for x in 0..ow {
            let (taps, fixed) = if along_height { (&contribs[y], x) } else { (&contribs[x], y) };
            let mut acc = [0.0f64; 3];
            for (&i, &wt) in taps.indices.iter().zip(&taps.weights) {
                let base = if along_height { (i * w + fixed) * 3 } else { (fixed * w + i) * 3 };
                for c in 0..3 {
                    acc[c] += wt * src[base + c];
                }
            }
            out[(y * ow + x) * 3..][..3].copy_from_slice(&acc);
        }
    }
    out
}

fn resize_with(img: &ImageRgb, out_h: usize, out_w: usize, sh: f64, sw: f64) -> ImageRgb {
    let (h, w) = (img.height(), img.width());
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let rows = resample_weights(h, out_h, sh);
    let cols = resample_weights(w, out_w, sw);
    let tmp = resize_axis(&src, h, w, &rows, true);
    let out = resize_axis(&tmp, out_h, w, &cols, false);
    ImageRgb::new(out_h, out_w, out.into_iter().map(|v| v as f32).collect()).expect("resize output dims")
}

/// Bicubic resampling to an explicit size, per-axis scale out/in.
pub fn bicubic_resize(img: &ImageRgb, out_h: usize, out_w: usize) -> ImageRgb {
    assert!(out_h > 0 && out_w > 0, "output dims must be positive");
    let sh = out_h as f64 / img.height() as f64;
    let sw = out_w as f64 / img.width() as f64;
    resize_with(img, out_h, out_w, sh, sw)
}

/// Bicubic resampling by a uniform factor; output dims are ceil(in · scale).
pub fn bicubic_rescale(img: &ImageRgb, scale: f64) -> ImageRgb {
    let out_h = (img.height() as f64 * scale).ceil() as usize;
    let out_w = (img.width() as f64 * scale).ceil() as usize;
    resize_with(img, out_h.max(1), out_w.max(1), scale, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert_eq!(cubic(0.5), 0.5625);
        assert_eq!(cubic(1.5), -0.0625);
    }

    #[test]
    fn mirror_is_half_sample_symmetric() {
        let got: Vec<usize> = (-2..=7).map(|i| mirror(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn identity_size_is_identity() {
        let img = ImageRgb::from_fn(7, 5, |y, x, c| ((y * 13 + x * 7 + c) % 11) as f32 / 10.0);
        let out = bicubic_resize(&img, 7, 5);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn halving_weights_match_hand_derivation() {
        // Scale 0.5: output sample 1 sits at u = 1.5, kernel width 8.
        let c = &resample_weights(16, 8, 0.5)[3];
        // u = 4/0.5 + 0.5·(1-2) = 7.5; taps cover 3.5 ± 4 → 1-based 4..=11
        let expect_raw: Vec<f64> = (3..=12).map(|i| 0.5 * cubic(0.5 * (7.5 - i as f64))).collect();
        let total: f64 = expect_raw.iter().sum();
        let nz: Vec<f64> = expect_raw.iter().filter(|w| **w != 0.0).map(|w| w / total).collect();
        assert_eq!(c.weights.len(), nz.len());
        for (a, b) in c.weights.iter().zip(&nz) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(c.indices.first(), Some(&3));
    }
}
