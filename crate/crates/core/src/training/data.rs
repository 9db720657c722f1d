use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Image;

/// Training hyper-parameters. Noise levels are in the same `[0, 1]`
/// intensity units as the images (pixel-scale σ divided by 255).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub batch_size: usize,
    pub crop_size: usize,
    pub lr0: f64,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub max_epochs: usize,
    /// Learning-rate factor applied when backtracking after divergence.
    pub backtrack_factor: f64,
    pub checkpoint_every: usize,
    /// A batch diverges when its loss exceeds this multiple of the running
    /// median of recent batch losses.
    pub divergence_factor: f64,
    pub divergence_window: usize,
    /// Stop when the best validation loss improved by less than
    /// `convergence_tol` (relative) over `convergence_window` epochs.
    pub convergence_window: usize,
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma_lo: 25.0 / 255.0,
            sigma_hi: 25.0 / 255.0,
            batch_size: 10,
            crop_size: 128,
            lr0: 1e-3,
            lr_decay: 0.95,
            decay_every: 50,
            max_epochs: 6000,
            backtrack_factor: 0.8,
            checkpoint_every: 10,
            divergence_factor: 5.0,
            divergence_window: 100,
            convergence_window: 100,
            convergence_tol: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::contract(msg));
        if !(0.0 <= self.sigma_lo && self.sigma_lo <= self.sigma_hi && self.sigma_hi.is_finite()) {
            return bad(format!("noise range [{}, {}] is invalid", self.sigma_lo, self.sigma_hi));
        }
        if self.batch_size == 0 || self.crop_size == 0 {
            return bad("batch size and crop size must be >= 1".into());
        }
        if !(self.lr0 > 0.0) {
            return bad(format!("lr0 {} must be > 0", self.lr0));
        }
        for (name, v) in [("lr_decay", self.lr_decay), ("backtrack_factor", self.backtrack_factor)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} {v} must be in (0, 1)"));
            }
        }
        if self.decay_every == 0 || self.checkpoint_every == 0 {
            return bad("decay_every and checkpoint_every must be >= 1".into());
        }
        Ok(())
    }

    /// Middle of the noise range.
    pub fn sigma_mid(&self) -> f64 {
        0.5 * (self.sigma_lo + self.sigma_hi)
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("train.sigma_lo", self.sigma_lo);
        kv.set("train.sigma_hi", self.sigma_hi);
        kv.set("train.batch_size", self.batch_size);
        kv.set("train.crop_size", self.crop_size);
        kv.set("train.lr0", self.lr0);
        kv.set("train.lr_decay", self.lr_decay);
        kv.set("train.decay_every", self.decay_every);
        kv.set("train.max_epochs", self.max_epochs);
        kv.set("train.backtrack_factor", self.backtrack_factor);
        kv.set("train.checkpoint_every", self.checkpoint_every);
        kv.set("train.divergence_factor", self.divergence_factor);
        kv.set("train.divergence_window", self.divergence_window);
        kv.set("train.convergence_window", self.convergence_window);
        kv.set("train.convergence_tol", self.convergence_tol);
        kv.set("train.seed", self.seed);
    }

    /// Reads `train.*` keys over `base`. `train.sigma_range_255 = lo,hi`
    /// (pixel-scale noise levels) is accepted as a convenience and wins over
    /// `train.sigma_lo` / `train.sigma_hi`.
    pub fn from_kv(kv: &KeyValues, base: Self) -> Result<Self> {
        let mut cfg = Self {
            sigma_lo: kv.get("train.sigma_lo")?.unwrap_or(base.sigma_lo),
            sigma_hi: kv.get("train.sigma_hi")?.unwrap_or(base.sigma_hi),
            batch_size: kv.get("train.batch_size")?.unwrap_or(base.batch_size),
            crop_size: kv.get("train.crop_size")?.unwrap_or(base.crop_size),
            lr0: kv.get("train.lr0")?.unwrap_or(base.lr0),
            lr_decay: kv.get("train.lr_decay")?.unwrap_or(base.lr_decay),
            decay_every: kv.get("train.decay_every")?.unwrap_or(base.decay_every),
            max_epochs: kv.get("train.max_epochs")?.unwrap_or(base.max_epochs),
            backtrack_factor: kv.get("train.backtrack_factor")?.unwrap_or(base.backtrack_factor),
            checkpoint_every: kv.get("train.checkpoint_every")?.unwrap_or(base.checkpoint_every),
            divergence_factor: kv.get("train.divergence_factor")?.unwrap_or(base.divergence_factor),
            divergence_window: kv.get("train.divergence_window")?.unwrap_or(base.divergence_window),
            convergence_window: kv.get("train.convergence_window")?.unwrap_or(base.convergence_window),
            convergence_tol: kv.get("train.convergence_tol")?.unwrap_or(base.convergence_tol),
            seed: kv.get("train.seed")?.unwrap_or(base.seed),
        };
        if let Some(range) = kv.get_str("train.sigma_range_255") {
            let parts: Vec<f64> = range
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format {
                    kind: "config",
                    msg: format!("cannot parse noise range `{range}`"),
                })?;
            let (lo, hi) = match parts.as_slice() {
                [s] => (*s, *s),
                [lo, hi] => (*lo, *hi),
                _ => {
                    return Err(Error::Format {
                        kind: "config",
                        msg: format!("noise range `{range}` needs one or two values"),
                    })
                }
            };
            cfg.sigma_lo = lo / 255.0;
            cfg.sigma_hi = hi / 255.0;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One training pair. `y` and `x` are both shifted by `mean`, the mean of
/// the noisy crop, which is added back after denoising.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub y: Image<T>,
    pub x: Image<T>,
    pub sigma: f64,
    pub mean: f64,
}

/// `x + n` with `n ~ N(0, sigma²)` drawn from `rng`.
pub fn add_noise<T: Real>(x: &Image<T>, sigma: f64, rng: &mut impl Rng) -> Image<T> {
    let data = x
        .data()
        .iter()
        .map(|v| {
            let n: f64 = StandardNormal.sample(rng);
            T::of(v.f64() + sigma * n)
        })
        .collect();
    Image::new(x.height(), x.width(), data).expect("same shape")
}

/// Random crop, random flips, random quarter-turn rotation, noise with σ
/// drawn uniformly from `[sigma_lo, sigma_hi]`, then mean subtraction.
/// Images are expected in `[0, 1]` intensity units (the loader divides by
/// 255).
pub fn make_sample<T: Real>(image: &Image<T>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Sample<T>> {
    let c = cfg.crop_size;
    let (h, w) = image.dims();
    if h < c || w < c {
        return Err(Error::contract(format!("{c}x{c} crop does not fit a {h}x{w} image")));
    }
    let top = rng.random_range(0..=h - c);
    let left = rng.random_range(0..=w - c);
    let mut x = image.crop(top, left, c, c)?;
    if rng.random_bool(0.5) {
        x = x.flip_horizontal();
    }
    if rng.random_bool(0.5) {
        x = x.flip_vertical();
    }
    for _ in 0..rng.random_range(0..4u32) {
        x = x.rot90();
    }
    let sigma = if cfg.sigma_hi > cfg.sigma_lo {
        rng.random_range(cfg.sigma_lo..=cfg.sigma_hi)
    } else {
        cfg.sigma_lo
    };
    let y = add_noise(&x, sigma, rng);
    let mean = y.mean();
    let shift = T::of(mean);
    Ok(Sample {
        y: y.map(|v| v - shift),
        x: x.map(|v| v - shift),
        sigma,
        mean,
    })
}

/// One augmented sample per image, in order.
pub fn make_batch<T: Real>(images: &[&Image<T>], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Sample<T>>> {
    images.iter().map(|img| make_sample(img, cfg, rng)).collect()
}

/// Fixed validation pairs: centre crops (no augmentation) with noise from a
/// seed-derived stream.
pub fn validation_samples<T: Real>(images: &[Image<T>], cfg: &TrainConfig) -> Result<Vec<Sample<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    images
        .iter()
        .map(|img| {
            let (h, w) = img.dims();
            let (ch, cw) = (cfg.crop_size.min(h), cfg.crop_size.min(w));
            let x = img.crop((h - ch) / 2, (w - cw) / 2, ch, cw)?;
            let sigma = if cfg.sigma_hi > cfg.sigma_lo {
                rng.random_range(cfg.sigma_lo..=cfg.sigma_hi)
            } else {
                cfg.sigma_lo
            };
            let y = add_noise(&x, sigma, &mut rng);
            let mean = y.mean();
            let shift = T::of(mean);
            Ok(Sample {
                y: y.map(|v| v - shift),
                x: x.map(|v| v - shift),
                sigma,
                mean,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> Image<f64> {
        Image::from_fn(20, 24, |r, c| ((r * 31 + c * 17) % 255) as f64 / 255.0)
    }

    #[test]
    fn degenerate_range_gives_fixed_sigma() {
        let cfg = TrainConfig { crop_size: 8, ..TrainConfig::default() };
        let img = image();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = make_batch(&[&img, &img, &img], &cfg, &mut rng).unwrap();
        assert!(batch.iter().all(|s| s.sigma == 25.0 / 255.0));
        assert!(batch.iter().all(|s| s.y.dims() == (8, 8)));
    }

    #[test]
    fn same_seed_same_batch() {
        let cfg = TrainConfig { crop_size: 8, sigma_lo: 0.05, sigma_hi: 0.2, ..TrainConfig::default() };
        let img = image();
        let a = make_batch(&[&img, &img], &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = make_batch(&[&img, &img], &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| (0.05..=0.2).contains(&s.sigma)));
    }

    #[test]
    fn mean_is_removed_from_noisy_input_and_target_alike() {
        let cfg = TrainConfig { crop_size: 10, ..TrainConfig::default() };
        let s = make_sample(&image(), &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(s.y.mean().abs() < 1e-12);
        // Undo the shift: the clean crop is a crop of the original image.
        let restored = s.x.map(|v| v + s.mean);
        assert!(restored.data().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn crop_larger_than_image_is_rejected() {
        let cfg = TrainConfig { crop_size: 30, ..TrainConfig::default() };
        assert!(make_sample(&image(), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn config_validation_and_kv_round_trip() {
        let mut bad = TrainConfig { sigma_lo: 0.3, sigma_hi: 0.1, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        bad = TrainConfig { lr_decay: 1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());

        let cfg = TrainConfig { sigma_lo: 15.0 / 255.0, sigma_hi: 35.0 / 255.0, seed: 7, ..TrainConfig::default() };
        let mut kv = KeyValues::new();
        cfg.write_kv(&mut kv);
        let back = TrainConfig::from_kv(&KeyValues::parse(&kv.to_text()).unwrap(), TrainConfig::default()).unwrap();
        assert_eq!(back, cfg);

        let kv = KeyValues::parse("train.sigma_range_255 = 15, 35").unwrap();
        let c = TrainConfig::from_kv(&kv, TrainConfig::default()).unwrap();
        assert_eq!((c.sigma_lo, c.sigma_hi), (15.0 / 255.0, 35.0 / 255.0));
    }
}
