use rand::Rng;

use super::image::ImageRgb;
use super::sampler::SamplePair;

/// The eight symmetries of the square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dihedral {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
    Transpose,
    AntiTranspose,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::FlipH,
        Dihedral::FlipV,
        Dihedral::Transpose,
        Dihedral::AntiTranspose,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&d| d == self).unwrap()
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.gen_range(0..8)]
    }

    /// Source pixel for output (y, x) of an n×n square.
    fn source(self, y: usize, x: usize, n: usize) -> (usize, usize) {
        let m = n - 1;
        match self {
            Dihedral::Identity => (y, x),
            // counter-clockwise
            Dihedral::Rot90 => (x, m - y),
            Dihedral::Rot180 => (m - y, m - x),
            Dihedral::Rot270 => (m - x, y),
            Dihedral::FlipH => (y, m - x),
            Dihedral::FlipV => (m - y, x),
            Dihedral::Transpose => (x, y),
            Dihedral::AntiTranspose => (m - x, m - y),
        }
    }

    /// Panics on a non-square image.
    pub fn apply(self, img: &ImageRgb) -> ImageRgb {
        let n = img.height();
        assert_eq!(n, img.width(), "dihedral transforms need a square image");
        ImageRgb::from_fn(n, n, |y, x, c| {
            let (sy, sx) = self.source(y, x, n);
            img.get(sy, sx, c)
        })
    }
}

/// Applies one uniformly drawn transform to both patches of the pair.
pub fn augment<R: Rng + ?Sized>(pair: &SamplePair, rng: &mut R) -> (SamplePair, Dihedral) {
    let t = Dihedral::random(rng);
    let out = SamplePair { lr: t.apply(&pair.lr), hr: t.apply(&pair.hr), scale: pair.scale };
    (out, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ramp(n: usize) -> ImageRgb {
        ImageRgb::from_fn(n, n, |y, x, c| (y * n + x) as f32 + c as f32 * 0.25)
    }

    #[test]
    fn transforms_are_distinct() {
        let img = ramp(3);
        let outs: HashSet<Vec<u32>> = Dihedral::ALL
            .iter()
            .map(|t| t.apply(&img).data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(outs.len(), 8);
    }

    #[test]
    fn rotation_composes() {
        let img = ramp(4);
        let twice = Dihedral::Rot90.apply(&Dihedral::Rot90.apply(&img));
        assert_eq!(twice, Dihedral::Rot180.apply(&img));
        let back = Dihedral::Rot270.apply(&Dihedral::Rot90.apply(&img));
        assert_eq!(back, img);
    }

    #[test]
    fn rot90_is_counter_clockwise() {
        // [[0,1],[2,3]] rotated counter-clockwise is [[1,3],[0,2]]
        let img = ImageRgb::from_fn(2, 2, |y, x, _| (y * 2 + x) as f32);
        let r = Dihedral::Rot90.apply(&img);
        let got: Vec<f32> = r.data().iter().step_by(3).copied().collect();
        assert_eq!(got, vec![1.0, 3.0, 0.0, 2.0]);
    }
}
