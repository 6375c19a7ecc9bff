//! Atlas priors, per-voxel Bayesian tissue posteriors and the Gaussian
//! Bayesian Brain Map (GBBM) abnormality score.
//!
//! At every brain voxel the spatial prior from the tissue atlases and the
//! posterior given the voxel's normalized intensity are compared by Pearson
//! correlation. Agreement (correlation near 1) means healthy tissue; the
//! correlation is folded into `[0, 1]` and scaled by `omega`.

use std::ops::Index;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ngmm::{normal_ln_pdf, Tissue, TissueMixtureModel};
use crate::volume::{BinaryMask, Grid, ScalarVolume};

/// Three values indexed CSF, GM, WM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueTriple(pub [f64; 3]);

impl TissueTriple {
    pub const UNIFORM: TissueTriple = TissueTriple([1.0 / 3.0; 3]);

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl Index<Tissue> for TissueTriple {
    type Output = f64;

    fn index(&self, t: Tissue) -> &f64 {
        &self.0[t.index()]
    }
}

/// Template plus per-tissue probability maps and brain mask, on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticAtlas {
    pub template: ScalarVolume,
    /// CSF, GM, WM maps.
    pub tissues: [ScalarVolume; 3],
    pub brain_mask: BinaryMask,
}

impl ProbabilisticAtlas {
    pub fn new(
        template: ScalarVolume,
        tissues: [ScalarVolume; 3],
        brain_mask: BinaryMask,
    ) -> Result<Self> {
        let grid = *template.grid();
        for (t, map) in Tissue::ALL.iter().zip(&tissues) {
            grid.ensure_same(map.grid(), &format!("{t} map vs template"))?;
            if map.data().iter().any(|&v| v < 0.0) {
                return Err(Error::invalid(format!("{t} map has negative values")));
            }
        }
        grid.ensure_same(brain_mask.grid(), "brain mask vs template")?;
        Ok(ProbabilisticAtlas {
            template,
            tissues,
            brain_mask,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.template.grid()
    }

    pub fn tissue_map(&self, t: Tissue) -> &ScalarVolume {
        &self.tissues[t.index()]
    }
}

/// Normalizes the atlas tissue values at `voxel` into a prior triple.
/// All-zero atlas evidence gives the uniform prior.
pub fn spatial_prior(atlas: &ProbabilisticAtlas, voxel: [usize; 3]) -> Result<TissueTriple> {
    let grid = atlas.grid();
    if (0..3).any(|a| voxel[a] >= grid.dims[a]) {
        return Err(Error::OutOfRange(format!(
            "voxel {voxel:?} outside dims {:?}",
            grid.dims
        )));
    }
    let i = grid.index(voxel[0], voxel[1], voxel[2]);
    Ok(prior_at(atlas, i))
}

#[inline]
fn prior_at(atlas: &ProbabilisticAtlas, i: usize) -> TissueTriple {
    let xi = [
        atlas.tissues[0].data()[i] as f64,
        atlas.tissues[1].data()[i] as f64,
        atlas.tissues[2].data()[i] as f64,
    ];
    prior_from_evidence(xi)
}

pub(crate) fn prior_from_evidence(xi: [f64; 3]) -> TissueTriple {
    let s = xi[0] + xi[1] + xi[2];
    if s > 0.0 {
        TissueTriple([xi[0] / s, xi[1] / s, xi[2] / s])
    } else {
        TissueTriple::UNIFORM
    }
}

/// Posterior from Bayes' rule, and whether the denominator vanished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub probs: TissueTriple,
    /// True when the evidence underflowed and `probs` is the prior.
    pub fell_back: bool,
}

/// Smallest Bayes denominator treated as informative.
pub const MIN_EVIDENCE: f64 = 1e-300;

/// p(k | x) = prior_k N(x; μ_k, σ_k) / Σ_j prior_j N(x; μ_j, σ_j).
pub fn posterior_triple(
    model: &TissueMixtureModel,
    prior: TissueTriple,
    x: f64,
) -> Result<Posterior> {
    model.ensure_three_tissues()?;
    Ok(posterior_unchecked(model, prior, x))
}

#[inline]
fn posterior_unchecked(model: &TissueMixtureModel, prior: TissueTriple, x: f64) -> Posterior {
    let c = model.components();
    // Log domain so far-tail likelihoods keep full relative precision.
    let mut log_joint = [0.0; 3];
    for k in 0..3 {
        log_joint[k] = prior.0[k].ln() + normal_ln_pdf(x, c[k].mean, c[k].std);
    }
    let top = log_joint[0].max(log_joint[1]).max(log_joint[2]);
    let scaled = log_joint.map(|l| (l - top).exp());
    let sum = scaled[0] + scaled[1] + scaled[2];
    if !(top + sum.ln() >= MIN_EVIDENCE.ln()) {
        return Posterior {
            probs: prior,
            fell_back: true,
        };
    }
    Posterior {
        probs: TissueTriple(scaled.map(|v| v / sum)),
        fell_back: false,
    }
}

/// Variances below this make the correlation undefined; it is reported as 0.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Pearson correlation of the two triples using the sample covariance.
pub fn pearson_cc(alpha: TissueTriple, beta: TissueTriple) -> f64 {
    let ma = alpha.sum() / 3.0;
    let mb = beta.sum() / 3.0;
    let mut cab = 0.0;
    let mut caa = 0.0;
    let mut cbb = 0.0;
    for k in 0..3 {
        let da = alpha.0[k] - ma;
        let db = beta.0[k] - mb;
        cab += da * db;
        caa += da * da;
        cbb += db * db;
    }
    // Sample covariance divides by n - 1 = 2.
    let (cab, caa, cbb) = (cab / 2.0, caa / 2.0, cbb / 2.0);
    if caa < MIN_VARIANCE || cbb < MIN_VARIANCE {
        return 0.0;
    }
    (cab / (caa * cbb).sqrt()).clamp(-1.0, 1.0)
}

/// Folds a correlation into `[0, 1]`: `1 - cc` for positive `cc`, `-cc`
/// otherwise. The jump at zero is intentional.
pub fn cc_to_cm(cc: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&cc) {
        return Err(Error::invalid(format!("correlation {cc} outside [-1, 1]")));
    }
    Ok(if cc > 0.0 { 1.0 - cc } else { 0.0 - cc })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbbmParams {
    /// Output intensity range; map values lie in `[0, omega]`.
    pub omega: f64,
}

impl Default for GbbmParams {
    fn default() -> Self {
        GbbmParams { omega: 255.0 }
    }
}

impl GbbmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::invalid(format!("omega must be positive, got {}", self.omega)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GbbmOutput {
    pub map: ScalarVolume,
    /// Brain voxels whose Bayes denominator vanished (posterior = prior).
    pub evidence_fallbacks: usize,
    /// Brain voxels where a triple had zero variance (correlation set to 0).
    pub degenerate_correlations: usize,
}

/// Computes `omega * cm(cc(posterior, prior))` inside the atlas brain mask;
/// zero elsewhere. `patient` must already be mean-normalized and share the
/// atlas grid.
pub fn build_gbbm(
    patient: &ScalarVolume,
    atlas: &ProbabilisticAtlas,
    model: &TissueMixtureModel,
    params: &GbbmParams,
) -> Result<GbbmOutput> {
    params.validate()?;
    model.ensure_three_tissues()?;
    atlas.grid().ensure_same(patient.grid(), "patient vs atlas")?;
    let omega = params.omega;
    let mask = atlas.brain_mask.data();
    let values: Vec<(f32, bool, bool)> = (0..patient.data().len())
        .into_par_iter()
        .map(|i| {
            if !mask[i] {
                return (0.0, false, false);
            }
            let prior = prior_at(atlas, i);
            let post = posterior_unchecked(model, prior, patient.data()[i] as f64);
            let cc = pearson_cc(post.probs, prior);
            let degenerate = cc == 0.0 && is_degenerate(post.probs, prior);
            let cm = if cc > 0.0 { 1.0 - cc } else { 0.0 - cc };
            ((omega * cm) as f32, post.fell_back, degenerate)
        })
        .collect();
    let evidence_fallbacks = values.iter().filter(|v| v.1).count();
    let degenerate_correlations = values.iter().filter(|v| v.2).count();
    let map = ScalarVolume::new(*patient.grid(), values.into_iter().map(|v| v.0).collect())?;
    Ok(GbbmOutput {
        map,
        evidence_fallbacks,
        degenerate_correlations,
    })
}

fn is_degenerate(a: TissueTriple, b: TissueTriple) -> bool {
    let var = |t: TissueTriple| {
        let m = t.sum() / 3.0;
        t.0.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 2.0
    };
    var(a) < MIN_VARIANCE || var(b) < MIN_VARIANCE
}
