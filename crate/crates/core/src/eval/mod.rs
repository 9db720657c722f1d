//! Image I/O, PSNR, the end-to-end denoising pipeline and benchmark reports.

mod pgm;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use pgm::{decode_pgm, encode_pgm, load_image, quantize, save_image};
pub use report::{EvalRecord, EvalReport, REPORT_HEADER};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::noise::{estimate_mad, estimate_pca, EstimatorConfig, Method};
use crate::real::Real;
use crate::tensor::Image;
use crate::training::add_noise;

/// `10 log10(1 / MSE)` for images in `[0, 1]`; `+∞` when they are identical.
pub fn psnr<T: Real>(x: &Image<T>, x_hat: &Image<T>) -> Result<f64> {
    if x.dims() != x_hat.dims() {
        return Err(Error::shape(format!(
            "PSNR of {:?} against {:?}",
            x.dims(),
            x_hat.dims()
        )));
    }
    if x.is_empty() {
        return Err(Error::contract("PSNR of an empty image"));
    }
    let sse: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (a.f64() - b.f64()).powi(2))
        .sum();
    let mse = sse / x.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// How the denoiser obtains the noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    AutoMad,
    AutoPca,
    /// Known noise level on the 0-255 scale.
    Fixed(f64),
    /// No noise level (non-adaptive models only).
    None,
}

impl std::str::FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto-mad" | "mad" => Ok(SigmaMode::AutoMad),
            "auto-pca" | "pca" | "auto" => Ok(SigmaMode::AutoPca),
            "none" => Ok(SigmaMode::None),
            other => match other.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(SigmaMode::Fixed(v)),
                _ => Err(Error::contract(format!(
                    "noise level must be auto-mad, auto-pca, none or a number >= 0, got `{s}`"
                ))),
            },
        }
    }
}

impl std::fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SigmaMode::AutoMad => f.write_str("auto-mad"),
            SigmaMode::AutoPca => f.write_str("auto-pca"),
            SigmaMode::Fixed(v) => write!(f, "{v}"),
            SigmaMode::None => f.write_str("none"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Denoised {
    /// Output on the `[0, 1]` scale, clamped.
    pub image: Image<f64>,
    /// Noise level used, on the `[0, 1]` scale.
    pub sigma: Option<f64>,
    /// Estimator that produced `sigma` (PCA may fall back to MAD).
    pub estimator: Option<Method>,
    pub millis: f64,
}

/// Full pipeline on a `[0, 1]` image: reflect-pad to the stride, subtract
/// the mean, estimate σ if asked to, run the network, add the mean back,
/// crop and clamp.
pub fn denoise<T: Real>(params: &ModelParams<T>, y: &Image<f64>, mode: SigmaMode) -> Result<Denoised> {
    let start = Instant::now();
    if y.is_empty() {
        return Err(Error::contract("cannot denoise an empty image"));
    }
    let (sigma, estimator) = match mode {
        SigmaMode::AutoMad => (Some(estimate_mad(y)?), Some(Method::Mad)),
        SigmaMode::AutoPca => {
            let est = estimate_pca(y, &EstimatorConfig::default())?;
            (Some(est.sigma), Some(est.method))
        }
        SigmaMode::Fixed(v) => (Some(v / 255.0), Some(Method::GroundTruth)),
        SigmaMode::None => (None, None),
    };
    if params.config.adaptive && sigma.is_none() {
        return Err(Error::contract(
            "adaptive model needs a noise level: pass auto-mad, auto-pca or a number",
        ));
    }
    let image = run_network(params, y, sigma)?;
    Ok(Denoised {
        image,
        sigma,
        estimator,
        millis: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn run_network<T: Real>(params: &ModelParams<T>, y: &Image<f64>, sigma: Option<f64>) -> Result<Image<f64>> {
    let (h, w) = y.dims();
    let padded = y.reflect_pad_to_multiple(params.config.stride);
    let mean = padded.mean();
    let centered: Image<T> = padded.map(|v| v - mean).cast();
    let out = params.forward(&centered, sigma)?;
    let restored = out.x_hat.cast::<f64>().map(|v| v + mean);
    Ok(restored.crop(0, 0, h, w)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Evaluation settings. Noise levels are on the 0-255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub sigmas: Vec<f64>,
    pub estimator: Method,
    pub seed: u64,
    pub model_id: String,
}

/// `*.pgm` files in `dir`, sorted by name.
pub fn list_dataset(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_pgm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        if is_pgm && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every image of a dataset directory, named by file name.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<(String, Image<f64>)>> {
    let dir = dir.as_ref();
    let files = list_dataset(dir)?;
    if files.is_empty() {
        return Err(Error::Format {
            kind: "dataset",
            msg: format!("no .pgm images in {}", dir.display()),
        });
    }
    files
        .iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, load_image(p)?))
        })
        .collect()
}

/// Stream id for the noise of one (image, σ) pair: FNV-1a over the image
/// name and the bits of σ, so the realisation does not depend on dataset
/// order or on which other images are evaluated.
pub fn noise_stream(name: &str, sigma_255: f64) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in name.as_bytes().iter().chain(&sigma_255.to_bits().to_le_bytes()) {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Noisy copy of `x` for an evaluation run.
pub fn eval_noise(x: &Image<f64>, name: &str, sigma_255: f64, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(noise_stream(name, sigma_255));
    add_noise(x, sigma_255 / 255.0, &mut rng)
}

/// Denoises every image at every σ and collects one record per pair.
pub fn evaluate<T: Real>(params: &ModelParams<T>, images: &[(String, Image<f64>)], cfg: &EvalConfig) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::contract("evaluation needs at least one image"));
    }
    if cfg.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::contract(format!("noise levels must be finite and >= 0: {:?}", cfg.sigmas)));
    }
    let jobs: Vec<(usize, f64)> = cfg
        .sigmas
        .iter()
        .flat_map(|&s| (0..images.len()).map(move |i| (i, s)))
        .collect();
    let results = crate::par::map_slice(&jobs, |&(i, sigma_255)| -> Result<EvalRecord> {
        let (name, x) = &images[i];
        let y = eval_noise(x, name, sigma_255, cfg.seed);
        let mode = match cfg.estimator {
            Method::Mad => SigmaMode::AutoMad,
            Method::Pca => SigmaMode::AutoPca,
            Method::GroundTruth => SigmaMode::Fixed(sigma_255),
        };
        let mode = if !params.config.adaptive && cfg.estimator == Method::GroundTruth {
            SigmaMode::None
        } else {
            mode
        };
        let out = denoise(params, &y, mode)?;
        Ok(EvalRecord {
            image: name.clone(),
            sigma: sigma_255,
            estimator: out.estimator.unwrap_or(cfg.estimator),
            sigma_used: out.sigma.map(|s| s * 255.0),
            psnr_noisy: psnr(x, &y)?,
            psnr: psnr(x, &out.image)?,
            millis: out.millis,
        })
    });
    Ok(EvalReport {
        model_id: cfg.model_id.clone(),
        records: results.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn psnr_closed_forms() {
        let x = Image::<f64>::filled(4, 4, 0.5);
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
        let y = x.map(|v| v + 0.1);
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-12);
        assert!(psnr(&x, &Image::zeros(4, 5)).is_err());
    }

    #[test]
    fn sigma_mode_parsing() {
        assert_eq!("auto-pca".parse::<SigmaMode>().unwrap(), SigmaMode::AutoPca);
        assert_eq!("auto-mad".parse::<SigmaMode>().unwrap(), SigmaMode::AutoMad);
        assert_eq!("25".parse::<SigmaMode>().unwrap(), SigmaMode::Fixed(25.0));
        assert_eq!("none".parse::<SigmaMode>().unwrap(), SigmaMode::None);
        assert!("-3".parse::<SigmaMode>().is_err());
        assert!("loud".parse::<SigmaMode>().is_err());
    }

    #[test]
    fn adaptive_model_requires_sigma() {
        let cfg = ModelConfig {
            k: 2,
            m: 2,
            filter_size: 3,
            stride: 1,
            adaptive: true,
            seed: 0,
        };
        let params = ModelParams::<f64>::init(cfg, 0.1).unwrap();
        let y = Image::filled(8, 8, 0.3);
        assert!(denoise(&params, &y, SigmaMode::None).is_err());
        assert!(denoise(&params, &y, SigmaMode::Fixed(10.0)).is_ok());
    }

    #[test]
    fn odd_sizes_are_padded_and_cropped() {
        let cfg = ModelConfig {
            k: 2,
            m: 4,
            filter_size: 3,
            stride: 2,
            adaptive: false,
            seed: 1,
        };
        let params = ModelParams::<f64>::init(cfg, 0.1).unwrap();
        let y = Image::from_fn(7, 9, |r, c| ((r * 9 + c) % 5) as f64 / 5.0);
        let out = denoise(&params, &y, SigmaMode::None).unwrap();
        assert_eq!(out.image.dims(), (7, 9));
    }

    #[test]
    fn noise_streams_depend_on_name_and_sigma() {
        assert_ne!(noise_stream("a.pgm", 25.0), noise_stream("b.pgm", 25.0));
        assert_ne!(noise_stream("a.pgm", 25.0), noise_stream("a.pgm", 15.0));
        let x = Image::zeros(4, 4);
        assert_eq!(eval_noise(&x, "a", 25.0, 3), eval_noise(&x, "a", 25.0, 3));
        assert_ne!(eval_noise(&x, "a", 25.0, 3), eval_noise(&x, "a", 25.0, 4));
    }
}
