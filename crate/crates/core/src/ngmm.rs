//! Mean-normalized intensities and the univariate Gaussian mixture fitted to
//! them by expectation-maximization.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv::KvRecord;
use crate::volume::{BinaryMask, ScalarVolume};

/// Lower bound on component variance, in normalized intensity units squared.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Tissue classes, in ascending order of T1 intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tissue {
    Csf,
    Gm,
    Wm,
}

impl Tissue {
    pub const ALL: [Tissue; 3] = [Tissue::Csf, Tissue::Gm, Tissue::Wm];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Tissue::Csf => "csf",
            Tissue::Gm => "gm",
            Tissue::Wm => "wm",
        }
    }
}

impl fmt::Display for Tissue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Divisor applied by [`normalize_intensity`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationRecord {
    /// Mean raw intensity over the mask.
    pub mean: f64,
    pub mask_voxels: usize,
}

/// Divides every voxel by the mean intensity over `mask`, so the masked mean
/// becomes 1.
pub fn normalize_intensity(
    vol: &ScalarVolume,
    mask: &BinaryMask,
) -> Result<(ScalarVolume, NormalizationRecord)> {
    let mean = vol
        .masked_mean(mask)?
        .ok_or_else(|| Error::Normalization("brain mask is empty".into()))?;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::Normalization(format!(
            "mean intensity over mask must be positive, got {mean}"
        )));
    }
    let data = vol.data().iter().map(|&v| (v as f64 / mean) as f32).collect();
    let out = ScalarVolume::new(*vol.grid(), data)?;
    Ok((
        out,
        NormalizationRecord {
            mean,
            mask_voxels: mask.count(),
        },
    ))
}

/// Univariate normal density.
pub fn gaussian_pdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok(normal_pdf(x, mu, sigma))
}

#[inline]
pub(crate) fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

#[inline]
pub(crate) fn normal_ln_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// K weighted Gaussians over normalized intensity, kept sorted by mean.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMixtureModel {
    components: Vec<Component>,
}

impl TissueMixtureModel {
    pub fn new(mut components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        for c in &components {
            if !(c.weight >= 0.0 && c.weight <= 1.0) {
                return Err(Error::invalid(format!("weight {} outside [0, 1]", c.weight)));
            }
            if !c.mean.is_finite() {
                return Err(Error::invalid("component mean is not finite"));
            }
            if !(c.std.is_finite() && c.std * c.std >= VARIANCE_FLOOR * (1.0 - 1e-9)) {
                return Err(Error::invalid(format!(
                    "component std {} below floor {}",
                    c.std,
                    VARIANCE_FLOOR.sqrt()
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        components.sort_by(|a, b| a.mean.total_cmp(&b.mean));
        Ok(TissueMixtureModel { components })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// The component labeled `tissue`; only defined for three strictly
    /// ordered components.
    pub fn tissue(&self, tissue: Tissue) -> Result<&Component> {
        self.ensure_three_tissues()?;
        Ok(&self.components[tissue.index()])
    }

    pub(crate) fn ensure_three_tissues(&self) -> Result<()> {
        if self.k() != 3 {
            return Err(Error::invalid(format!(
                "tissue labels need K = 3 components, model has {}",
                self.k()
            )));
        }
        let c = &self.components;
        if !(c[0].mean < c[1].mean && c[1].mean < c[2].mean) {
            return Err(Error::invalid("tissue means are not strictly increasing"));
        }
        Ok(())
    }

    pub fn density(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * normal_pdf(x, c.mean, c.std))
            .sum()
    }

    pub fn to_kv(&self) -> KvRecord {
        let mut rec = KvRecord::new();
        rec.push("K", self.k());
        for (i, c) in self.components.iter().enumerate() {
            rec.push_f64(format!("weight_{i}"), c.weight);
            rec.push_f64(format!("mean_{i}"), c.mean);
            rec.push_f64(format!("std_{i}"), c.std);
        }
        rec
    }

    pub fn from_kv(rec: &KvRecord) -> Result<Self> {
        let k: usize = rec.parse_value("K")?;
        let allowed = 1 + 3 * k;
        if rec.entries().len() != allowed {
            return Err(Error::Config(format!(
                "model file has {} keys, expected {allowed}",
                rec.entries().len()
            )));
        }
        let components = (0..k)
            .map(|i| {
                Ok(Component {
                    weight: rec.parse_value(&format!("weight_{i}"))?,
                    mean: rec.parse_value(&format!("mean_{i}"))?,
                    std: rec.parse_value(&format!("std_{i}"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TissueMixtureModel::new(components)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_kv().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvRecord::read(path)?)
    }
}

/// Σ_k weight_k · N(x; μ_k, σ_k).
pub fn mixture_density(model: &TissueMixtureModel, x: f64) -> f64 {
    model.density(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmSettings {
    pub k: usize,
    /// Stop once the mean per-sample log-likelihood improves by less.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Larger inputs are uniformly subsampled (seeded) down to this size.
    pub max_samples: usize,
}

impl Default for EmSettings {
    fn default() -> Self {
        EmSettings {
            k: 3,
            tol: 1e-6,
            max_iters: 500,
            seed: 0,
            max_samples: 2_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: TissueMixtureModel,
    /// Mean per-sample log-likelihood after each E-step, starting with the
    /// initial parameters.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits a K-component univariate mixture by EM.
///
/// Samples are sorted before anything else, so the result does not depend
/// on input order. Means start at the `(2k-1)/(2K)` quantiles, standard
/// deviations at `std(samples) / K`, weights uniform.
pub fn fit_em(samples: &[f64], settings: &EmSettings) -> Result<EmFit> {
    let k = settings.k;
    if k < 1 {
        return Err(Error::invalid("K must be >= 1"));
    }
    if settings.max_iters < 1 {
        return Err(Error::invalid("max_iters must be >= 1"));
    }
    if samples.len() < 10 * k {
        return Err(Error::InsufficientData {
            needed: 10 * k,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite sample".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    if xs.len() > settings.max_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let mut picked = index::sample(&mut rng, xs.len(), settings.max_samples).into_vec();
        picked.sort_unstable();
        xs = picked.into_iter().map(|i| xs[i]).collect();
    }
    let n = xs.len();

    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let init_std = (var.sqrt() / k as f64).max(VARIANCE_FLOOR.sqrt());
    let mut weights = vec![1.0 / k as f64; k];
    let mut means: Vec<f64> = (1..=k)
        .map(|j| {
            let q = (2 * j - 1) as f64 / (2 * k) as f64;
            xs[((q * n as f64) as usize).min(n - 1)]
        })
        .collect();
    let mut stds = vec![init_std; k];

    let mut resp = vec![0.0f64; n * k];
    let mut history = Vec::new();
    let mut ll = e_step(&xs, &weights, &means, &stds, &mut resp)?;
    history.push(ll);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iters {
        iterations += 1;
        m_step(&xs, &resp, &mut weights, &mut means, &mut stds);
        let next = e_step(&xs, &weights, &means, &stds, &mut resp)?;
        history.push(next);
        let gain = next - ll;
        ll = next;
        if gain < settings.tol {
            converged = true;
            break;
        }
    }

    let components = (0..k)
        .map(|j| Component {
            weight: weights[j],
            mean: means[j],
            std: stds[j],
        })
        .collect();
    Ok(EmFit {
        model: TissueMixtureModel::new(renormalized(components))?,
        log_likelihood: history,
        iterations,
        converged,
    })
}

fn renormalized(mut cs: Vec<Component>) -> Vec<Component> {
    let total: f64 = cs.iter().map(|c| c.weight).sum();
    cs.iter_mut().for_each(|c| c.weight /= total);
    cs
}

/// Fills responsibilities and returns the mean per-sample log-likelihood.
fn e_step(xs: &[f64], w: &[f64], mu: &[f64], sd: &[f64], resp: &mut [f64]) -> Result<f64> {
    let k = w.len();
    let ln_w: Vec<f64> = w.iter().map(|&v| v.ln()).collect();
    let mut total = 0.0;
    let mut buf = vec![0.0; k];
    for (i, &x) in xs.iter().enumerate() {
        let mut hi = f64::NEG_INFINITY;
        for j in 0..k {
            buf[j] = ln_w[j] + normal_ln_pdf(x, mu[j], sd[j]);
            hi = hi.max(buf[j]);
        }
        let mut s = 0.0;
        for b in buf.iter_mut() {
            *b = (*b - hi).exp();
            s += *b;
        }
        let r = &mut resp[i * k..(i + 1) * k];
        for j in 0..k {
            r[j] = buf[j] / s;
        }
        total += hi + s.ln();
    }
    let ll = total / xs.len() as f64;
    if !ll.is_finite() {
        return Err(Error::Numerical("log-likelihood is not finite".into()));
    }
    Ok(ll)
}

fn m_step(xs: &[f64], resp: &[f64], w: &mut [f64], mu: &mut [f64], sd: &mut [f64]) {
    let k = w.len();
    let n = xs.len() as f64;
    for j in 0..k {
        let mut nk = 0.0;
        let mut sx = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let r = resp[i * k + j];
            nk += r;
            sx += r * x;
        }
        if nk <= f64::MIN_POSITIVE {
            // Starved component: keep its parameters, drop its weight.
            w[j] = 0.0;
            continue;
        }
        let m = sx / nk;
        let mut sv = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let d = x - m;
            sv += resp[i * k + j] * d * d;
        }
        w[j] = nk / n;
        mu[j] = m;
        sd[j] = (sv / nk).max(VARIANCE_FLOOR).sqrt();
    }
}

/// Voxel values of `vol` inside `mask`, in linear order.
pub fn masked_samples(vol: &ScalarVolume, mask: &BinaryMask) -> Result<Vec<f64>> {
    vol.grid().ensure_same(mask.grid(), "sample extraction")?;
    Ok(vol
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v as f64)
        .collect())
}
