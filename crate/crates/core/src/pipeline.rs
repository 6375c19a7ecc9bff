//! Stage functions and the end-to-end run: mixture fit, abnormality map,
//! candidate extraction, level-set segmentation and optional scoring.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::brainmap::{build_gbbm, GbbmOutput, GbbmParams, ProbabilisticAtlas};
use crate::candidate::{extract_candidate, CandidateParams, CandidateRegion, DEFAULT_PSI_FRACTION};
use crate::error::{Error, Result};
use crate::fvf::{
    evolve, signed_distance_init, stability_bound, zero_level_mask, Evolution, EvolutionParams,
    ForceContext, DEFAULT_BAND, DEFAULT_EDGE_SIGMA,
};
use crate::io::{read_mask, read_scalar, write_mask, write_scalar};
use crate::kv::{write_atomic, KvRecord};
use crate::metrics::{tanimoto, OverlapReport};
use crate::ngmm::{fit_em, masked_samples, normalize_intensity, EmFit, EmSettings, TissueMixtureModel};
use crate::phantom::{manifest, synth_atlas, synth_patient, TumorSpec};
use crate::volume::{BinaryMask, Connectivity, ScalarVolume};

pub const TEMPLATE_FILE: &str = "template.mvol";
pub const TISSUE_FILES: [&str; 3] = ["csf.mvol", "gm.mvol", "wm.mvol"];
pub const BRAIN_MASK_FILE: &str = "brain_mask.mvol";
pub const PATIENT_FILE: &str = "patient.mvol";
pub const TRUTH_FILE: &str = "truth.mvol";
pub const MANIFEST_FILE: &str = "phantom_manifest.txt";
pub const MODEL_FILE: &str = "model.txt";
pub const GBBM_FILE: &str = "gbbm.mvol";
pub const CANDIDATE_FILE: &str = "candidate.mvol";
pub const CANDIDATE_REPORT_FILE: &str = "candidate_report.txt";
pub const SEGMENTATION_FILE: &str = "segmentation.mvol";
pub const FVF_LOG_FILE: &str = "fvf_log.txt";
pub const REPORT_FILE: &str = "report.txt";

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NoCandidate { .. } => 3,
        Error::Instability { .. } => 4,
        Error::Io { .. } => 5,
        _ => 1,
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.source)
    }
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Every tunable of a run. Unset `psi` means `0.6 * omega`; unset `dt`
/// means the stability bound for the current weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub atlas_dir: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub em: EmSettings,
    pub omega: f64,
    pub psi: Option<f64>,
    pub strip_depth: usize,
    pub erode_iters: usize,
    pub dilate_iters: usize,
    pub connectivity: Connectivity,
    pub alpha: f64,
    pub beta: f64,
    pub dt: Option<f64>,
    pub max_iters: usize,
    pub reinit_every: usize,
    pub stop_tol: f64,
    pub band_halfwidth: usize,
    pub edge_sigma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let cand = CandidateParams::default();
        let evo = EvolutionParams::default();
        PipelineConfig {
            input: None,
            atlas_dir: None,
            model: None,
            output_dir: PathBuf::from("."),
            ground_truth: None,
            em: EmSettings::default(),
            omega: GbbmParams::default().omega,
            psi: None,
            strip_depth: cand.strip_depth,
            erode_iters: cand.erode_iters,
            dilate_iters: cand.dilate_iters,
            connectivity: cand.connectivity,
            alpha: evo.alpha,
            beta: evo.beta,
            dt: None,
            max_iters: evo.max_iters,
            reinit_every: evo.reinit_every,
            stop_tol: evo.stop_tol,
            band_halfwidth: DEFAULT_BAND,
            edge_sigma: DEFAULT_EDGE_SIGMA,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{key}={value}`")))
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 24] = [
        "input",
        "atlas_dir",
        "model",
        "output_dir",
        "ground_truth",
        "seed",
        "em_components",
        "em_tol",
        "em_max_iters",
        "em_max_samples",
        "omega",
        "psi",
        "strip_depth",
        "erode_iters",
        "dilate_iters",
        "connectivity",
        "alpha",
        "beta",
        "dt",
        "max_iters",
        "reinit_every",
        "stop_tol",
        "band_halfwidth",
        "edge_sigma",
    ];

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input" => self.input = Some(value.into()),
            "atlas_dir" => self.atlas_dir = Some(value.into()),
            "model" => self.model = Some(value.into()),
            "output_dir" => self.output_dir = value.into(),
            "ground_truth" => self.ground_truth = Some(value.into()),
            "seed" => self.em.seed = parse(key, value)?,
            "em_components" => self.em.k = parse(key, value)?,
            "em_tol" => self.em.tol = parse(key, value)?,
            "em_max_iters" => self.em.max_iters = parse(key, value)?,
            "em_max_samples" => self.em.max_samples = parse(key, value)?,
            "omega" => self.omega = parse(key, value)?,
            "psi" => self.psi = Some(parse(key, value)?),
            "strip_depth" => self.strip_depth = parse(key, value)?,
            "erode_iters" => self.erode_iters = parse(key, value)?,
            "dilate_iters" => self.dilate_iters = parse(key, value)?,
            "connectivity" => self.connectivity = Connectivity::from_count(parse(key, value)?)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "dt" => self.dt = Some(parse(key, value)?),
            "max_iters" => self.max_iters = parse(key, value)?,
            "reinit_every" => self.reinit_every = parse(key, value)?,
            "stop_tol" => self.stop_tol = parse(key, value)?,
            "band_halfwidth" => self.band_halfwidth = parse(key, value)?,
            "edge_sigma" => self.edge_sigma = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every entry of `rec` without validating the result, so later
    /// overrides can still fix a value.
    pub fn merge(&mut self, rec: &KvRecord) -> Result<()> {
        for (k, v) in rec.entries() {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv(rec: &KvRecord) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.merge(rec)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KvRecord::read(path)?)
    }

    pub fn gbbm_params(&self) -> GbbmParams {
        GbbmParams { omega: self.omega }
    }

    pub fn candidate_params(&self) -> CandidateParams {
        CandidateParams {
            psi: self.psi.unwrap_or(DEFAULT_PSI_FRACTION * self.omega),
            omega: self.omega,
            strip_depth: self.strip_depth,
            erode_iters: self.erode_iters,
            dilate_iters: self.dilate_iters,
            connectivity: self.connectivity,
        }
    }

    pub fn evolution_params(&self, h: f64) -> EvolutionParams {
        EvolutionParams {
            dt: self.dt.unwrap_or_else(|| stability_bound(self.alpha, self.beta, h)),
            alpha: self.alpha,
            beta: self.beta,
            max_iters: self.max_iters,
            reinit_every: self.reinit_every,
            stop_tol: self.stop_tol,
        }
    }

    /// Checks every parameter against its module's bounds.
    pub fn validate(&self) -> Result<()> {
        if self.em.k < 1 || self.em.max_iters < 1 || !(self.em.tol > 0.0) || self.em.max_samples < 1 {
            return Err(Error::Config("EM settings out of range".into()));
        }
        self.gbbm_params().validate()?;
        self.candidate_params().validate()?;
        self.evolution_params(1.0).validate()?;
        if !(self.edge_sigma > 0.0 && self.edge_sigma.is_finite()) {
            return Err(Error::invalid("edge_sigma must be positive"));
        }
        Ok(())
    }

    /// Effective configuration, one key per line.
    /// Every key in `KEYS` order; unset optional keys are left out so the
    /// record loads back into an equal config.
    pub fn to_kv(&self) -> KvRecord {
        let mut rec = KvRecord::new();
        let opt = |rec: &mut KvRecord, key: &str, v: Option<String>| {
            if let Some(v) = v {
                rec.push(key, v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        opt(&mut rec, "input", path(&self.input));
        opt(&mut rec, "atlas_dir", path(&self.atlas_dir));
        opt(&mut rec, "model", path(&self.model));
        rec.push("output_dir", self.output_dir.display());
        opt(&mut rec, "ground_truth", path(&self.ground_truth));
        rec.push("seed", self.em.seed)
            .push("em_components", self.em.k)
            .push("em_tol", self.em.tol)
            .push("em_max_iters", self.em.max_iters)
            .push("em_max_samples", self.em.max_samples)
            .push("omega", self.omega);
        opt(&mut rec, "psi", self.psi.map(|v| v.to_string()));
        rec.push("strip_depth", self.strip_depth)
            .push("erode_iters", self.erode_iters)
            .push("dilate_iters", self.dilate_iters)
            .push("connectivity", self.connectivity.count())
            .push("alpha", self.alpha)
            .push("beta", self.beta);
        opt(&mut rec, "dt", self.dt.map(|v| v.to_string()));
        rec.push("max_iters", self.max_iters)
            .push("reinit_every", self.reinit_every)
            .push("stop_tol", self.stop_tol)
            .push("band_halfwidth", self.band_halfwidth)
            .push("edge_sigma", self.edge_sigma);
        rec
    }
}

pub fn load_atlas(dir: &Path) -> Result<ProbabilisticAtlas> {
    let template = read_scalar(&dir.join(TEMPLATE_FILE))?;
    let tissues = [
        read_scalar(&dir.join(TISSUE_FILES[0]))?,
        read_scalar(&dir.join(TISSUE_FILES[1]))?,
        read_scalar(&dir.join(TISSUE_FILES[2]))?,
    ];
    let mask = read_mask(&dir.join(BRAIN_MASK_FILE))?;
    ProbabilisticAtlas::new(template, tissues, mask)
}

pub fn save_atlas(atlas: &ProbabilisticAtlas, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_scalar(&atlas.template, &dir.join(TEMPLATE_FILE))?;
    for (map, name) in atlas.tissues.iter().zip(TISSUE_FILES) {
        write_scalar(map, &dir.join(name))?;
    }
    write_mask(&atlas.brain_mask, &dir.join(BRAIN_MASK_FILE))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes a phantom atlas, patient, ground truth and manifest into `dir`.
pub fn write_phantom(dir: &Path, dims: [usize; 3], atlas_seed: u64, tumor: &TumorSpec) -> Result<()> {
    let atlas = synth_atlas(dims, atlas_seed)?;
    let (patient, truth) = synth_patient(&atlas, tumor)?;
    save_atlas(&atlas, dir)?;
    write_scalar(&patient, &dir.join(PATIENT_FILE))?;
    write_mask(&truth, &dir.join(TRUTH_FILE))?;
    manifest(dims, atlas_seed, tumor).write(&dir.join(MANIFEST_FILE))
}

/// Fits the tissue mixture on the mean-normalized template inside the brain.
pub fn fit_atlas_model(atlas: &ProbabilisticAtlas, em: &EmSettings) -> Result<EmFit> {
    let (norm, _) = normalize_intensity(&atlas.template, &atlas.brain_mask)?;
    let samples = masked_samples(&norm, &atlas.brain_mask)?;
    let fit = fit_em(&samples, em)?;
    if fit.model.k() == 3 {
        fit.model.tissue(crate::ngmm::Tissue::Csf)?;
    }
    Ok(fit)
}

/// Normalizes the patient over the atlas brain mask and builds the map.
pub fn patient_gbbm(
    patient: &ScalarVolume,
    atlas: &ProbabilisticAtlas,
    model: &TissueMixtureModel,
    params: &GbbmParams,
) -> Result<GbbmOutput> {
    let (norm, _) = normalize_intensity(patient, &atlas.brain_mask)?;
    build_gbbm(&norm, atlas, model, params)
}

/// Runs the level set from the candidate and returns the evolution.
pub fn segment(
    patient: &ScalarVolume,
    region: &CandidateRegion,
    cfg: &PipelineConfig,
) -> Result<Evolution> {
    let grid = *patient.grid();
    grid.ensure_same(region.mask.grid(), "patient vs candidate")?;
    let ls = signed_distance_init(region, cfg.band_halfwidth)?;
    let ctx = ForceContext::from_patient(patient, cfg.edge_sigma, region.centroid, region.mask.clone())?;
    evolve(&ls, &ctx, &cfg.evolution_params(grid.min_spacing()))
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub record: KvRecord,
    pub overlap: Option<OverlapReport>,
    pub iterations: usize,
    pub candidate_voxels: usize,
    pub segmentation: BinaryMask,
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("`{what}` is required")))
}

/// Runs every stage and writes all artifacts into `cfg.output_dir`.
///
/// On a no-candidate or instability failure a report carrying `status` is
/// still written before the error is returned.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<PipelineReport, StageError> {
    let start = Instant::now();
    cfg.validate().stage("config")?;
    let out = cfg.output_dir.as_path();
    create_dir(out).stage("config")?;

    let atlas_dir = required(&cfg.atlas_dir, "atlas_dir").stage("load")?;
    let atlas = load_atlas(atlas_dir).stage("load")?;
    let patient = read_scalar(required(&cfg.input, "input").stage("load")?).stage("load")?;
    let truth = match &cfg.ground_truth {
        Some(p) => Some(read_mask(p).stage("load")?),
        None => None,
    };

    let model = match &cfg.model {
        Some(p) => TissueMixtureModel::load(p).stage("fit")?,
        None => fit_atlas_model(&atlas, &cfg.em).stage("fit")?.model,
    };
    model.save(&out.join(MODEL_FILE)).stage("fit")?;

    let gbbm = patient_gbbm(&patient, &atlas, &model, &cfg.gbbm_params()).stage("gbbm")?;
    write_scalar(&gbbm.map, &out.join(GBBM_FILE)).stage("gbbm")?;

    let mut rec = KvRecord::new();
    let finish = |rec: &mut KvRecord, status: &str| -> Result<()> {
        rec.push("status", status)
            .push_f64("runtime_seconds", start.elapsed().as_secs_f64());
        rec.write(&out.join(REPORT_FILE))
    };

    let region = match extract_candidate(&gbbm.map, &atlas.brain_mask, &cfg.candidate_params(), None) {
        Ok(r) => r,
        Err(e @ Error::NoCandidate { .. }) => {
            rec.push("candidate_voxels", 0);
            if let Some(t) = &truth {
                let empty = BinaryMask::empty(*t.grid());
                if let Ok(o) = tanimoto(&empty, t) {
                    rec.push_f64("tm", o.tanimoto);
                }
            }
            let _ = finish(&mut rec, "no-candidate");
            return Err(e).stage("candidate");
        }
        Err(e) => return Err(e).stage("candidate"),
    };
    write_mask(&region.mask, &out.join(CANDIDATE_FILE)).stage("candidate")?;
    region.report().write(&out.join(CANDIDATE_REPORT_FILE)).stage("candidate")?;

    let evolution = match segment(&patient, &region, cfg) {
        Ok(e) => e,
        Err(e @ Error::Instability { .. }) => {
            rec.push("candidate_voxels", region.voxel_count);
            let _ = finish(&mut rec, "instability");
            return Err(e).stage("segment");
        }
        Err(e) => return Err(e).stage("segment"),
    };
    let seg = zero_level_mask(&evolution.field);
    write_mask(&seg, &out.join(SEGMENTATION_FILE)).stage("segment")?;
    write_atomic(&out.join(FVF_LOG_FILE), evolution.render_log().as_bytes()).stage("segment")?;

    let overlap = match &truth {
        Some(t) => Some(tanimoto(&seg, t).stage("evaluate")?),
        None => None,
    };
    if let Some(o) = &overlap {
        for (k, v) in o.to_kv().entries() {
            rec.push(k.clone(), v);
        }
    }
    rec.push("iterations", evolution.field.iteration)
        .push("converged", evolution.converged)
        .push("candidate_voxels", region.voxel_count)
        .push("segmentation_voxels", seg.count())
        .push("evidence_fallbacks", gbbm.evidence_fallbacks)
        .push("degenerate_correlations", gbbm.degenerate_correlations);
    finish(&mut rec, "ok").stage("report")?;

    Ok(PipelineReport {
        record: rec,
        overlap,
        iterations: evolution.field.iteration,
        candidate_voxels: region.voxel_count,
        segmentation: seg,
    })
}
