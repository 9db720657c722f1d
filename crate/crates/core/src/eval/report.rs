use std::fmt::Write as _;

use crate::noise::Method;

/// Column names of the machine-readable report.
pub const REPORT_HEADER: &str = "model,image,sigma,estimator,sigma_used,psnr_noisy,psnr";

/// One image denoised at one noise level. Noise levels are on the 0-255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub image: String,
    pub sigma: f64,
    pub estimator: Method,
    pub sigma_used: Option<f64>,
    pub psnr_noisy: f64,
    pub psnr: f64,
    /// Wall-clock time of the denoising call.
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    /// Ordered by σ, then by image.
    pub records: Vec<EvalRecord>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    /// Distinct noise levels in report order.
    pub fn sigmas(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.sigma) {
                out.push(r.sigma);
            }
        }
        out
    }

    pub fn records_at(&self, sigma: f64) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter(move |r| r.sigma == sigma)
    }

    /// Arithmetic mean of the per-image PSNRs at `sigma`.
    pub fn mean_psnr(&self, sigma: f64) -> f64 {
        mean(self.records_at(sigma).map(|r| r.psnr))
    }

    pub fn mean_psnr_noisy(&self, sigma: f64) -> f64 {
        mean(self.records_at(sigma).map(|r| r.psnr_noisy))
    }

    pub fn mean_millis(&self, sigma: f64) -> f64 {
        mean(self.records_at(sigma).map(|r| r.millis))
    }

    /// Comma-separated records with a header row. Timings are left out unless
    /// asked for, so that repeated runs produce identical files.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from(REPORT_HEADER);
        if with_timing {
            out.push_str(",millis");
        }
        out.push('\n');
        for r in &self.records {
            let used = r.sigma_used.map(|s| format!("{s:.6}")).unwrap_or_default();
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                self.model_id,
                r.image,
                r.sigma,
                r.estimator,
                used,
                fmt_db(r.psnr_noisy),
                fmt_db(r.psnr)
            );
            if with_timing {
                let _ = write!(out, ",{:.3}", r.millis);
            }
            out.push('\n');
        }
        out
    }

    /// Per-σ summary table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!("model: {}\n", self.model_id);
        let _ = writeln!(
            out,
            "{:>8}  {:>9}  {:>6}  {:>11}  {:>11}  {:>9}",
            "sigma", "estimator", "images", "noisy (dB)", "output (dB)", "ms/image"
        );
        for s in self.sigmas() {
            let est = self
                .records_at(s)
                .next()
                .map(|r| r.estimator.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{:>8}  {:>9}  {:>6}  {:>11}  {:>11}  {:>9.1}",
                s,
                est,
                self.records_at(s).count(),
                fmt_db(self.mean_psnr_noisy(s)),
                fmt_db(self.mean_psnr(s)),
                self.mean_millis(s)
            );
        }
        out
    }
}
