//! Random reflection and per-axis rescaling of single-channel images.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Flip each axis with probability ½.
    pub reflect: bool,
    /// Per-axis scale factor range `[lo, hi]`.
    pub scale_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            reflect: true,
            scale_range: [0.9, 1.1],
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "augment.scale_range must satisfy 0 < lo <= hi (got [{lo}, {hi}])"
            )));
        }
        Ok(())
    }
}

/// One concrete draw of the augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub scale_y: f64,
    pub scale_x: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        flip_horizontal: false,
        flip_vertical: false,
        scale_y: 1.0,
        scale_x: 1.0,
    };

    pub fn draw(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let (flip_horizontal, flip_vertical) = if cfg.reflect {
            (rng.gen_bool(0.5), rng.gen_bool(0.5))
        } else {
            (false, false)
        };
        let [lo, hi] = cfg.scale_range;
        Transform {
            flip_horizontal,
            flip_vertical,
            scale_y: rng.gen_range(lo..=hi),
            scale_x: rng.gen_range(lo..=hi),
        }
    }

    /// Applies flips, then rescales about the image centre with bilinear
    /// resampling back to the original size (edges replicated).
    /// `image` must be `[height, width]`.
    pub fn apply(&self, image: &Tensor) -> Tensor {
        let (h, w) = match image.shape() {
            [h, w] => (*h, *w),
            _ => return image.clone(),
        };
        let src = image.data();
        let at = |y: usize, x: usize| {
            let y = if self.flip_vertical { h - 1 - y } else { y };
            let x = if self.flip_horizontal { w - 1 - x } else { x };
            src[y * w + x]
        };
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let mut out = Vec::with_capacity(h * w);
        for i in 0..h {
            let (y0, y1, fy) = sample_coord(i, cy, self.scale_y, h);
            for j in 0..w {
                let (x0, x1, fx) = sample_coord(j, cx, self.scale_x, w);
                let top = lerp(at(y0, x0), at(y0, x1), fx);
                let bottom = lerp(at(y1, x0), at(y1, x1), fx);
                out.push(lerp(top, bottom, fy));
            }
        }
        Tensor::new(out, vec![h, w]).expect("same shape as input")
    }
}

#[inline]
fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a + f * (b - a)
}

/// Source neighbours and fractional offset for output index `i`.
fn sample_coord(i: usize, centre: f64, scale: f64, n: usize) -> (usize, usize, f64) {
    let src = ((i as f64 - centre) / scale + centre).clamp(0.0, (n - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, src - lo as f64)
}

/// Counts samples that could not be treated as images.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct AugmentStats {
    pub augmented: u64,
    pub passed_through: u64,
}

/// Draws a transform and applies it. Non-2-D samples are returned as-is
/// and counted in `stats.passed_through`.
pub fn augment(
    sample: &Tensor,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
    stats: &mut AugmentStats,
) -> Tensor {
    if sample.shape().len() != 2 {
        stats.passed_through += 1;
        return sample.clone();
    }
    stats.augmented += 1;
    Transform::draw(cfg, rng).apply(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize) -> Tensor {
        Tensor::new(
            (0..h * w).map(|v| (v * 7 % 11) as f64).collect(),
            vec![h, w],
        )
        .unwrap()
    }

    #[test]
    fn identity_draw() {
        let img = image(8, 8);
        assert_eq!(Transform::IDENTITY.apply(&img), img);
        let cfg = AugmentConfig {
            enabled: true,
            reflect: false,
            scale_range: [1.0, 1.0],
        };
        let mut stats = AugmentStats::default();
        let out = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(0), &mut stats);
        assert_eq!(out, img);
        assert_eq!(stats.augmented, 1);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = image(5, 7);
        let flip = Transform {
            flip_horizontal: true,
            ..Transform::IDENTITY
        };
        let once = flip.apply(&img);
        assert_ne!(once, img);
        assert_eq!(once.row(0)[0], img.row(0)[6]);
        assert_eq!(flip.apply(&once), img);
        let vflip = Transform {
            flip_vertical: true,
            ..Transform::IDENTITY
        };
        assert_eq!(vflip.apply(&vflip.apply(&img)), img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::full(&[8, 8], 0.3125);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = AugmentConfig {
            scale_range: [0.5, 2.0],
            ..Default::default()
        };
        let mut stats = AugmentStats::default();
        for _ in 0..100 {
            let out = augment(&img, &cfg, &mut rng, &mut stats);
            assert!(out.data().iter().all(|&v| v == 0.3125));
        }
    }

    #[test]
    fn non_images_pass_through() {
        let v = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let mut stats = AugmentStats::default();
        let out = augment(
            &v,
            &AugmentConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
            &mut stats,
        );
        assert_eq!(out, v);
        assert_eq!(stats.passed_through, 1);
    }

    #[test]
    fn draws_respect_config() {
        let cfg = AugmentConfig {
            enabled: true,
            reflect: false,
            scale_range: [0.9, 1.1],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let t = Transform::draw(&cfg, &mut rng);
            assert!(!t.flip_horizontal && !t.flip_vertical);
            assert!((0.9..=1.1).contains(&t.scale_x) && (0.9..=1.1).contains(&t.scale_y));
        }
        assert!(AugmentConfig {
            scale_range: [1.2, 1.1],
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn upscaling_zooms_towards_centre() {
        // a single bright centre pixel spreads outwards when magnified
        let mut data = vec![0.0; 25];
        data[12] = 1.0;
        let img = Tensor::new(data, vec![5, 5]).unwrap();
        let t = Transform {
            scale_x: 2.0,
            scale_y: 2.0,
            ..Transform::IDENTITY
        };
        let out = t.apply(&img);
        assert_eq!(out.row(2)[2], 1.0);
        assert_eq!(out.row(2)[1], 0.5);
        assert_eq!(out.row(0)[0], 0.0);
    }
}
