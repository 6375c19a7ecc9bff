use std::error::Error as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tumorseg::candidate::{extract_candidate, CandidateRegion};
use tumorseg::fvf::zero_level_mask;
use tumorseg::io::{read_mask, read_scalar, write_mask, write_scalar};
use tumorseg::kv::{write_atomic, KvRecord};
use tumorseg::metrics::tanimoto;
use tumorseg::ngmm::TissueMixtureModel;
use tumorseg::phantom::{TumorShape, TumorSpec};
use tumorseg::pipeline::{
    exit_code, fit_atlas_model, load_atlas, patient_gbbm, run_pipeline, segment, write_phantom,
    PipelineConfig, CANDIDATE_FILE, CANDIDATE_REPORT_FILE, FVF_LOG_FILE, GBBM_FILE, MODEL_FILE,
    SEGMENTATION_FILE,
};
use tumorseg::{Error, Grid};

#[derive(Parser)]
#[command(name = "tumorseg", version, about = "Atlas-driven brain tumor segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic atlas, patient and ground truth.
    Phantom {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tumor: TumorArgs,
    },
    /// Fit the tissue mixture on the atlas template.
    Fit(Common),
    /// Build the abnormality map for a patient.
    Gbbm(Common),
    /// Extract the candidate region from an abnormality map.
    Candidate(Common),
    /// Run the level set from a candidate region.
    Segment {
        #[command(flatten)]
        common: Common,
        /// Candidate mask; defaults to candidate.mvol in the output directory.
        #[arg(long)]
        candidate: Option<PathBuf>,
    },
    /// Score a segmentation against ground truth.
    Evaluate(Common),
    /// Run every stage.
    Pipeline(Common),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    atlas_dir: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TumorArgs {
    #[arg(long, default_value = "sphere")]
    shape: TumorShape,
    /// Semi-axes in voxels, comma separated; one value for sphere and blob.
    #[arg(long, value_delimiter = ',', default_value = "8")]
    radii: Vec<f64>,
    /// Intensity offset in tissue standard deviations (0 or |offset| >= 3).
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    offset: f64,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = PipelineConfig::default();
        if let Some(p) = &self.config {
            cfg.merge(&KvRecord::read(p)?)?;
        }
        let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(k, &v));
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        set("input", path(&self.input))?;
        set("atlas_dir", path(&self.atlas_dir))?;
        set("model", path(&self.model))?;
        set("output_dir", path(&self.output_dir))?;
        set("ground_truth", path(&self.ground_truth))?;
        set("psi", self.psi.map(|v| v.to_string()))?;
        set("omega", self.omega.map(|v| v.to_string()))?;
        set("alpha", self.alpha.map(|v| v.to_string()))?;
        set("beta", self.beta.map(|v| v.to_string()))?;
        set("max_iters", self.max_iters.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Error> {
    p.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn model_for(cfg: &PipelineConfig, atlas: &tumorseg::brainmap::ProbabilisticAtlas) -> Result<TissueMixtureModel, Error> {
    match &cfg.model {
        Some(p) => TissueMixtureModel::load(p),
        None => Ok(fit_atlas_model(atlas, &cfg.em)?.model),
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Phantom { common, tumor } => {
            let cfg = common.config()?;
            let seed = cfg.em.seed;
            let grid = Grid::cube(tumor.size);
            let radii = match (tumor.shape, tumor.radii.as_slice()) {
                (TumorShape::Ellipsoid, [a, b, c]) => [*a, *b, *c],
                (TumorShape::Ellipsoid, _) => {
                    return Err(Error::Config("ellipsoid needs three --radii".into()))
                }
                (_, [r]) => [*r; 3],
                _ => return Err(Error::Config("sphere and blob take one --radii value".into())),
            };
            let spec = TumorSpec::in_cortex(&grid, tumor.shape, radii, tumor.offset, seed.wrapping_add(1));
            write_phantom(&cfg.output_dir, grid.dims, seed, &spec)?;
            println!("wrote phantom to {}", cfg.output_dir.display());
        }
        Command::Fit(common) => {
            let cfg = common.config()?;
            let atlas = load_atlas(need(&cfg.atlas_dir, "atlas-dir")?)?;
            let fit = fit_atlas_model(&atlas, &cfg.em)?;
            ensure_dir(&cfg.output_dir)?;
            let path = cfg.output_dir.join(MODEL_FILE);
            fit.model.save(&path)?;
            println!(
                "iterations={} converged={} model={}",
                fit.iterations,
                fit.converged,
                path.display()
            );
        }
        Command::Gbbm(common) => {
            let cfg = common.config()?;
            let atlas = load_atlas(need(&cfg.atlas_dir, "atlas-dir")?)?;
            let patient = read_scalar(need(&cfg.input, "input")?)?;
            let model = model_for(&cfg, &atlas)?;
            let out = patient_gbbm(&patient, &atlas, &model, &cfg.gbbm_params())?;
            ensure_dir(&cfg.output_dir)?;
            write_scalar(&out.map, &cfg.output_dir.join(GBBM_FILE))?;
            println!(
                "evidence_fallbacks={} degenerate_correlations={}",
                out.evidence_fallbacks, out.degenerate_correlations
            );
        }
        Command::Candidate(common) => {
            let cfg = common.config()?;
            let atlas = load_atlas(need(&cfg.atlas_dir, "atlas-dir")?)?;
            let map = read_scalar(need(&cfg.input, "input")?)?;
            let region = extract_candidate(&map, &atlas.brain_mask, &cfg.candidate_params(), None)?;
            ensure_dir(&cfg.output_dir)?;
            write_mask(&region.mask, &cfg.output_dir.join(CANDIDATE_FILE))?;
            let report = region.report();
            report.write(&cfg.output_dir.join(CANDIDATE_REPORT_FILE))?;
            print!("{}", report.render());
        }
        Command::Segment { common, candidate } => {
            let cfg = common.config()?;
            let patient = read_scalar(need(&cfg.input, "input")?)?;
            let cand_path = candidate.unwrap_or_else(|| cfg.output_dir.join(CANDIDATE_FILE));
            let region = CandidateRegion::from_mask(read_mask(&cand_path)?)?;
            let evolution = segment(&patient, &region, &cfg)?;
            let seg = zero_level_mask(&evolution.field);
            ensure_dir(&cfg.output_dir)?;
            write_mask(&seg, &cfg.output_dir.join(SEGMENTATION_FILE))?;
            write_atomic(&cfg.output_dir.join(FVF_LOG_FILE), evolution.render_log().as_bytes())?;
            println!(
                "iterations={} converged={} segmentation_voxels={}",
                evolution.field.iteration,
                evolution.converged,
                seg.count()
            );
        }
        Command::Evaluate(common) => {
            let cfg = common.config()?;
            let seg = read_mask(need(&cfg.input, "input")?)?;
            let truth = read_mask(need(&cfg.ground_truth, "ground-truth")?)?;
            print!("{}", tanimoto(&seg, &truth)?.to_kv().render());
        }
        Command::Pipeline(common) => {
            let cfg = common.config()?;
            match run_pipeline(&cfg) {
                Ok(report) => print!("{}", report.record.render()),
                Err(e) => {
                    eprintln!("error: {e}");
                    return Err(e.source);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let is_pipeline = matches!(cli.command, Command::Pipeline(_));
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !is_pipeline {
                eprintln!("error: {e}");
            }
            let mut src = e.source();
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
