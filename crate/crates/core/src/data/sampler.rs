use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::augment;
use super::dataset::DatasetIndex;
use super::image::ImageRgb;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side of the square HR training patch.
pub const HR_PATCH: usize = 96;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub lr: ImageRgb,
    pub hr: ImageRgb,
    pub scale: usize,
}

struct Pool {
    lr: ImageRgb,
    hr: ImageRgb,
}

/// Decoded LR/HR pairs for one scale, ready for random patch extraction.
pub struct PatchSampler {
    pool: Vec<Pool>,
    scale: usize,
    lr_patch: usize,
    augment: bool,
}

impl PatchSampler {
    /// Loads every entry with a cache for `scale`; images too small for an
    /// `hr_patch` crop are left out of the pool.
    pub fn new(index: &DatasetIndex, scale: usize, hr_patch: usize) -> Result<Self> {
        let mut pairs = Vec::new();
        for e in index.for_scale(scale) {
            pairs.push((e.load_lr(scale)?, e.load_hr()?));
        }
        Self::from_pairs(pairs, scale, hr_patch)
    }

    pub fn from_pairs(pairs: Vec<(ImageRgb, ImageRgb)>, scale: usize, hr_patch: usize) -> Result<Self> {
        if scale == 0 || hr_patch == 0 || hr_patch % scale != 0 {
            return Err(Error::Data(format!("patch {hr_patch} is not a positive multiple of scale {scale}")));
        }
        let lr_patch = hr_patch / scale;
        let mut pool = Vec::new();
        for (lr, hr) in pairs {
            if hr.height() != lr.height() * scale || hr.width() != lr.width() * scale {
                return Err(Error::Data(format!(
                    "HR {}x{} is not x{scale} of LR {}x{}",
                    hr.height(),
                    hr.width(),
                    lr.height(),
                    lr.width()
                )));
            }
            if lr.height() >= lr_patch && lr.width() >= lr_patch {
                pool.push(Pool { lr, hr });
            }
        }
        if pool.is_empty() {
            return Err(Error::Data(format!("no image large enough for a {hr_patch}px x{scale} patch")));
        }
        Ok(PatchSampler { pool, scale, lr_patch, augment: true })
    }

    pub fn without_augmentation(mut self) -> Self {
        self.augment = false;
        self
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn lr_patch(&self) -> usize {
        self.lr_patch
    }

    /// Generator for training step `step`, independent of every other step.
    pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step);
        rng
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> SamplePair {
        let p = &self.pool[rng.gen_range(0..self.pool.len())];
        let s = self.lr_patch;
        let top = rng.gen_range(0..=p.lr.height() - s);
        let left = rng.gen_range(0..=p.lr.width() - s);
        let a = self.scale;
        let pair = SamplePair {
            lr: p.lr.crop(top, left, s, s).expect("in-bounds crop"),
            hr: p.hr.crop(top * a, left * a, s * a, s * a).expect("in-bounds crop"),
            scale: a,
        };
        if self.augment {
            augment(&pair, rng).0
        } else {
            pair
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<SamplePair> {
        (0..batch).map(|_| self.sample_one(rng)).collect()
    }
}

/// Stacks pairs into (lr, hr) tensors of shape (n, 3, s, s) and (n, 3, a·s, a·s).
pub fn pairs_to_tensors(pairs: &[SamplePair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let lr: Vec<Tensor<f32>> = pairs.iter().map(|p| p.lr.to_tensor()).collect();
    let hr: Vec<Tensor<f32>> = pairs.iter().map(|p| p.hr.to_tensor()).collect();
    if lr.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    Ok((Tensor::stack(&lr)?, Tensor::stack(&hr)?))
}
