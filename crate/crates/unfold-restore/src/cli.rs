//! Command-line surface: `simulate | restore | evaluate | verify`.
//!
//! Every command is reproducible: inputs, config, and seed fully determine
//! the output bytes. Batch commands process images concurrently; the
//! `DRM_THREADS` environment variable caps the worker count.
//!
//! Exit codes: 0 success, 1 failed verification, 2 bad arguments,
//! 3 I/O failure, 4 solver failure.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::degrade::{self, simulate, synthetic_clean, write_matrices, DegradationKind, SimParams};
use crate::dpt::DptConfig;
use crate::error::{Error, Result};
use crate::init::{classify, estimate_initial};
use crate::metrics::{psnr, ssim};
use crate::oracle::{verify_suite, Fault};
use crate::priors::TaskPriorProfile;
use crate::raster::{load_image, save_image, write_atomic, Image};
use crate::solver::{self, ModelingForm, PenaltySchedule, ScheduleMode, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_BAD_ARGS: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Parser)]
#[command(
    name = "unfold-restore",
    version,
    about = "All-in-one image restoration: simulate degradations, restore with a reference pair, evaluate, and verify the solver against numeric oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade clean images (or generated synthetic ones) with known ground
    /// truth.
    Simulate(SimulateArgs),
    /// Restore a degraded image guided by a clean/degraded reference pair.
    Restore(RestoreArgs),
    /// Compare prediction and ground-truth directories and emit a CSV
    /// report.
    Evaluate(EvaluateArgs),
    /// Run the oracle suite; exit 0 iff every check passes.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Degradation kind: rain | haze | lowlight.
    #[arg(long, value_enum)]
    kind: DegradationKind,
    /// Directory of clean input images (PNG or PPM).
    #[arg(long = "in", value_name = "DIR", conflicts_with = "generate")]
    input: Option<PathBuf>,
    /// Generate N synthetic clean images instead of reading a directory.
    #[arg(long, value_name = "N")]
    generate: Option<usize>,
    /// Size of generated images as HxW [default: 64x64].
    #[arg(long, default_value = "64x64")]
    size: String,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Base seed; image i uses seed + i [default: 0].
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RestoreArgs {
    /// Degraded input image.
    #[arg(long = "in", value_name = "PATH")]
    input: Option<PathBuf>,
    /// Degraded half of the reference pair.
    #[arg(long, value_name = "PATH")]
    ref_degraded: Option<PathBuf>,
    /// Clean half of the reference pair.
    #[arg(long, value_name = "PATH")]
    ref_clean: Option<PathBuf>,
    /// Directory of simulate output to sample a reference pair from.
    #[arg(long, value_name = "DIR")]
    ref_pool: Option<PathBuf>,
    /// Seed for reference sampling from the pool [default: 0].
    #[arg(long, value_name = "N")]
    ref_seed: Option<u64>,
    /// Repeat restoration with N reference choices and report mean/std
    /// (requires --ref-pool).
    #[arg(long, value_name = "N")]
    ref_trials: Option<usize>,
    /// Ground-truth clean image; prints per-step PSNR when given.
    #[arg(long, value_name = "PATH")]
    gt: Option<PathBuf>,
    /// Output path for the restored image.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Degradation kind: auto | rain | haze | lowlight [default: auto].
    #[arg(long, value_enum)]
    kind: Option<KindChoice>,
    /// Number of unfolding steps [default: 6].
    #[arg(long)]
    steps: Option<usize>,
    /// Scheduling: parallel | serial [default: parallel].
    #[arg(long, value_enum)]
    schedule: Option<ScheduleMode>,
    /// Degradation modeling form: tbd | hb [default: tbd].
    #[arg(long, value_enum)]
    modeling_form: Option<ModelingForm>,
    /// JSON run config; explicit flags override file values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Write per-step B/T/D images and sidecars into this directory.
    #[arg(long, value_name = "DIR")]
    dump_intermediate: Option<PathBuf>,
    /// Write per-step attention matrices as CSV into this directory.
    #[arg(long, value_name = "DIR")]
    dump_attention: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of predicted images.
    #[arg(long, value_name = "DIR")]
    pred: PathBuf,
    /// Directory of ground-truth images, matched by filename.
    #[arg(long, value_name = "DIR")]
    gt: PathBuf,
    /// CSV output path; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Fault injection hook: none | z-off-by-eps.
    #[arg(long, value_enum, default_value = "none")]
    fault: Fault,
}

impl clap::ValueEnum for Fault {
    fn value_variants<'a>() -> &'a [Self] {
        &[Fault::None, Fault::ZOffByEps]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Fault::None => "none",
            Fault::ZOffByEps => "z-off-by-eps",
        }))
    }
}

impl clap::ValueEnum for DegradationKind {
    fn value_variants<'a>() -> &'a [Self] {
        &DegradationKind::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

impl clap::ValueEnum for ScheduleMode {
    fn value_variants<'a>() -> &'a [Self] {
        &[ScheduleMode::Parallel, ScheduleMode::Serial]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            ScheduleMode::Parallel => "parallel",
            ScheduleMode::Serial => "serial",
        }))
    }
}

impl clap::ValueEnum for ModelingForm {
    fn value_variants<'a>() -> &'a [Self] {
        &[ModelingForm::TbPlusD, ModelingForm::Hb]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            ModelingForm::TbPlusD => "tbd",
            ModelingForm::Hb => "hb",
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KindChoice {
    Auto,
    Rain,
    Haze,
    Lowlight,
}

impl KindChoice {
    fn fixed(&self) -> Option<DegradationKind> {
        match self {
            KindChoice::Auto => None,
            KindChoice::Rain => Some(DegradationKind::Rain),
            KindChoice::Haze => Some(DegradationKind::Haze),
            KindChoice::Lowlight => Some(DegradationKind::LowLight),
        }
    }
}

/// Per-kind prior profiles, selectable in the JSON config under
/// `priors.<kind>.{B,T,D}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorTable {
    pub rain: TaskPriorProfile,
    pub haze: TaskPriorProfile,
    pub lowlight: TaskPriorProfile,
}

impl Default for PriorTable {
    fn default() -> Self {
        Self {
            rain: TaskPriorProfile::default_for(DegradationKind::Rain),
            haze: TaskPriorProfile::default_for(DegradationKind::Haze),
            lowlight: TaskPriorProfile::default_for(DegradationKind::LowLight),
        }
    }
}

impl PriorTable {
    pub fn profile(&self, kind: DegradationKind) -> TaskPriorProfile {
        match kind {
            DegradationKind::Rain => self.rain,
            DegradationKind::Haze => self.haze,
            DegradationKind::LowLight => self.lowlight,
        }
    }
}

/// Fully resolved restore configuration; also the schema of
/// `<out>.manifest.json`, which re-runs to identical outputs. Unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub ref_degraded: Option<PathBuf>,
    pub ref_clean: Option<PathBuf>,
    pub ref_pool: Option<PathBuf>,
    pub ref_trials: Option<usize>,
    pub gt: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub kind: KindChoice,
    pub steps: usize,
    pub schedule: PenaltySchedule,
    pub mode: ScheduleMode,
    pub modeling_form: ModelingForm,
    pub eps: f64,
    pub dpt: DptConfig,
    pub priors: PriorTable,
    /// Seed for reference sampling; trial t samples with seed + t.
    pub seed: u64,
    pub dump_intermediate: Option<PathBuf>,
    pub dump_attention: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            ref_degraded: None,
            ref_clean: None,
            ref_pool: None,
            ref_trials: None,
            gt: None,
            output: None,
            kind: KindChoice::Auto,
            steps: 6,
            schedule: PenaltySchedule::default(),
            mode: ScheduleMode::Parallel,
            modeling_form: ModelingForm::TbPlusD,
            eps: degrade::DEFAULT_EPS,
            dpt: DptConfig::default(),
            priors: PriorTable::default(),
            seed: 0,
            dump_intermediate: None,
            dump_attention: None,
        }
    }
}

impl RunConfig {
    fn solver_config(&self, kind: DegradationKind) -> SolverConfig {
        SolverConfig {
            steps: self.steps,
            schedule: self.schedule,
            mode: self.mode,
            modeling_form: self.modeling_form,
            priors: self.priors.profile(kind),
            dpt: self.dpt,
            eps: self.eps,
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders --help/--version through the error path too.
            let code = if err.use_stderr() {
                EXIT_BAD_ARGS
            } else {
                EXIT_OK
            };
            let _ = err.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Restore(args) => cmd_restore(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Verify(args) => cmd_verify(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Read { .. } | Error::Write { .. } => EXIT_IO,
        Error::UnsupportedFormat(_) | Error::ZeroDimension => EXIT_IO,
        Error::CgNoConvergence { .. } => EXIT_SOLVER,
        Error::ShapeMismatch { .. } | Error::InvalidArgument(_) | Error::Config(_) => EXIT_BAD_ARGS,
    }
}

/// Worker cap for batch commands; `DRM_THREADS` overrides the detected
/// parallelism.
fn thread_cap() -> usize {
    if let Ok(v) = std::env::var("DRM_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Index-preserving parallel map over owned items.
fn parallel_map<T, R, F>(items: Vec<T>, f: F) -> Vec<Result<R>>
where
    T: Send + Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let n = items.len();
    let workers = thread_cap().min(n.max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let slots: Vec<std::sync::Mutex<Option<Result<R>>>> =
        (0..n).map(|_| std::sync::Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                *slots[i].lock().unwrap() = Some(f(&items[i]));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("slot filled"))
        .collect()
}

fn parse_size(size: &str) -> Result<(usize, usize)> {
    let (h, w) = size
        .split_once('x')
        .ok_or_else(|| Error::InvalidArgument(format!("--size expects HxW, got '{size}'")))?;
    let parse = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("bad --size component '{s}'")))
    };
    Ok((parse(h)?, parse(w)?))
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("ppm")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    create_dir(&args.out)?;
    let bases: Vec<(String, Image)> = match (&args.input, args.generate) {
        (Some(dir), None) => {
            let files = list_images(dir)?;
            if files.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no .png/.ppm images in {}",
                    dir.display()
                )));
            }
            let loaded = parallel_map(files, |p| Ok((stem_of(p), load_image(p)?)));
            loaded.into_iter().collect::<Result<_>>()?
        }
        (None, Some(n)) => {
            if n == 0 {
                return Err(Error::InvalidArgument("--generate must be >= 1".into()));
            }
            let (h, w) = parse_size(&args.size)?;
            (0..n)
                .map(|i| {
                    (
                        format!("img_{i:04}"),
                        synthetic_clean(h, w, args.seed.wrapping_add(i as u64)),
                    )
                })
                .collect()
        }
        _ => {
            return Err(Error::InvalidArgument(
                "exactly one of --in DIR or --generate N is required".into(),
            ))
        }
    };
    let generated = args.input.is_none();
    if generated {
        create_dir(&args.out.join("clean"))?;
    }
    let kind = args.kind;
    let seed = args.seed;
    let out = args.out.clone();
    let jobs: Vec<(usize, String, Image)> = bases
        .into_iter()
        .enumerate()
        .map(|(i, (stem, img))| (i, stem, img))
        .collect();
    let lines = parallel_map(jobs, |(i, stem, clean)| {
        let params = SimParams::new(kind, seed.wrapping_add(*i as u64));
        let (o, m) = simulate(clean, &params)?;
        save_image(&o, out.join(format!("{stem}.png")))?;
        write_matrices(out.join(format!("{stem}.td")), &m)?;
        write_json(&out.join(format!("{stem}.json")), &params)?;
        if generated {
            save_image(clean, out.join("clean").join(format!("{stem}.png")))?;
        }
        Ok(format!("{stem}: {kind} seed {}", params.seed))
    });
    for line in lines {
        println!("{}", line?);
    }
    Ok(EXIT_OK)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn merge_restore_config(args: &RestoreArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig::default(),
    };
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = &args.$field {
                cfg.$field = Some(v.clone());
            }
        };
    }
    take!(input);
    take!(ref_degraded);
    take!(ref_clean);
    take!(ref_pool);
    take!(gt);
    take!(dump_intermediate);
    take!(dump_attention);
    if let Some(v) = &args.out {
        cfg.output = Some(v.clone());
    }
    if let Some(v) = args.kind {
        cfg.kind = v;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.schedule {
        cfg.mode = v;
    }
    if let Some(v) = args.modeling_form {
        cfg.modeling_form = v;
    }
    if let Some(v) = args.ref_seed {
        cfg.seed = v;
    }
    if let Some(v) = args.ref_trials {
        cfg.ref_trials = Some(v);
    }
    Ok(cfg)
}

/// Reference pool entries: `<pool>/<stem>.png` degraded half,
/// `<pool>/clean/<stem>.png` clean half (the layout simulate writes).
fn pool_pairs(pool: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut pairs = Vec::new();
    for degraded in list_images(pool)? {
        let clean = pool.join("clean").join(degraded.file_name().unwrap());
        if clean.exists() {
            pairs.push((degraded, clean));
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "reference pool {} has no <stem>.png + clean/<stem>.png pairs",
            pool.display()
        )));
    }
    Ok(pairs)
}

#[derive(Debug, Serialize)]
struct TrialMeta {
    output: String,
    reference_degraded: String,
    reference_clean: String,
    psnr_final: Option<f64>,
    /// Per-step quality traces against --gt, when supplied.
    metrics: Option<crate::metrics::MetricRow>,
}

#[derive(Debug, Serialize)]
struct RestoreMeta {
    kind_requested: KindChoice,
    kind_resolved: DegradationKind,
    config_hash: String,
    trials: Vec<TrialMeta>,
    psnr_mean: Option<f64>,
    psnr_std: Option<f64>,
}

fn cmd_restore(args: &RestoreArgs) -> Result<i32> {
    let cfg = merge_restore_config(args)?;
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| Error::InvalidArgument("--in is required".into()))?;
    let output = cfg
        .output
        .clone()
        .ok_or_else(|| Error::InvalidArgument("--out is required".into()))?;
    if cfg.ref_trials.is_some() && cfg.ref_pool.is_none() {
        return Err(Error::InvalidArgument(
            "--ref-trials requires --ref-pool".into(),
        ));
    }

    let o = load_image(&input)?;
    let kind = cfg.kind.fixed().unwrap_or_else(|| classify(&o));
    let solver_cfg = cfg.solver_config(kind);
    solver_cfg.validate()?;

    // Resolve the reference pair per trial.
    let trials = cfg.ref_trials.unwrap_or(1).max(1);
    let pairs: Vec<(PathBuf, PathBuf)> = if let Some(pool) = &cfg.ref_pool {
        let pool_entries = pool_pairs(pool)?;
        use rand::{Rng, SeedableRng};
        (0..trials)
            .map(|t| {
                let mut rng =
                    rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
                pool_entries[rng.gen_range(0..pool_entries.len())].clone()
            })
            .collect()
    } else {
        let rd = cfg.ref_degraded.clone().ok_or_else(|| {
            Error::InvalidArgument("--ref-degraded and --ref-clean (or --ref-pool) required".into())
        })?;
        let rc = cfg
            .ref_clean
            .clone()
            .ok_or_else(|| Error::InvalidArgument("--ref-clean is required".into()))?;
        vec![(rd, rc)]
    };

    let gt = cfg.gt.as_ref().map(load_image).transpose()?;
    let m0 = estimate_initial(&o, kind);

    if let Some(dir) = &cfg.dump_intermediate {
        create_dir(dir)?;
    }
    if let Some(dir) = &cfg.dump_attention {
        create_dir(dir)?;
    }
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }

    let mut trial_meta = Vec::with_capacity(pairs.len());
    let mut finals = Vec::new();
    for (t, (ref_degraded, ref_clean)) in pairs.iter().enumerate() {
        let o_ref = load_image(ref_degraded)?;
        let b_ref = load_image(ref_clean)?;
        let result = solver::run(
            &o,
            &o_ref,
            &b_ref,
            &m0,
            &solver_cfg,
            Some(kind),
            vec![
                ref_degraded.display().to_string(),
                ref_clean.display().to_string(),
            ],
        )?;

        let out_path = if pairs.len() > 1 {
            with_suffix(&output, &format!("_trial{t}"))
        } else {
            output.clone()
        };
        save_image(&result.final_b, &out_path)?;

        let suffix = if pairs.len() > 1 {
            format!("_trial{t}")
        } else {
            String::new()
        };
        if let Some(dir) = &cfg.dump_intermediate {
            for (k, b_k) in result.trace_b.iter().enumerate() {
                save_image(b_k, dir.join(format!("b_step{}{suffix}.png", k + 1)))?;
            }
            for (k, (t_k, d_k)) in result.trace_td.iter().enumerate() {
                save_image(t_k, dir.join(format!("t_step{}{suffix}.png", k + 1)))?;
                // D spans [-1, 1]; encode as (v + 1) / 2 for the preview.
                save_image(
                    &d_k.map(|v| (v + 1.0) * 0.5),
                    dir.join(format!("d_step{}{suffix}.png", k + 1)),
                )?;
                write_matrices(
                    dir.join(format!("td_step{}{suffix}.td", k + 1)),
                    &degrade::DegradationMatrices::new(t_k.clone(), d_k.clone())?,
                )?;
            }
        }
        if let Some(dir) = &cfg.dump_attention {
            for (k, a) in result.attention.iter().enumerate() {
                let mut csv = String::new();
                for row in a {
                    let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
                    csv.push_str(&cells.join(","));
                    csv.push('\n');
                }
                write_atomic(
                    &dir.join(format!("attention_step{}{suffix}.csv", k + 1)),
                    csv.as_bytes(),
                )?;
            }
        }

        let metrics_row = match &gt {
            Some(gt_img) => {
                let mut psnr_steps = Vec::with_capacity(result.trace_b.len());
                let mut ssim_steps = Vec::with_capacity(result.trace_b.len());
                for b_k in &result.trace_b {
                    psnr_steps.push(psnr(b_k, gt_img)?);
                    ssim_steps.push(ssim(b_k, gt_img)?);
                }
                for (k, v) in psnr_steps.iter().enumerate() {
                    println!("trial {t} step {}: {v:.3} dB", k + 1);
                }
                finals.push(*psnr_steps.last().unwrap());
                Some(crate::metrics::MetricRow {
                    image_id: stem_of(&input),
                    kind: Some(kind),
                    psnr: psnr_steps,
                    ssim: ssim_steps,
                    config_hash: solver_cfg.content_hash(),
                })
            }
            None => None,
        };
        trial_meta.push(TrialMeta {
            output: out_path.display().to_string(),
            reference_degraded: ref_degraded.display().to_string(),
            reference_clean: ref_clean.display().to_string(),
            psnr_final: metrics_row.as_ref().map(|m| *m.psnr.last().unwrap()),
            metrics: metrics_row,
        });
    }

    let (psnr_mean, psnr_std) = if finals.is_empty() {
        (None, None)
    } else {
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / finals.len() as f64;
        (Some(mean), Some(var.sqrt()))
    };
    if let (Some(mean), Some(std)) = (psnr_mean, psnr_std) {
        println!(
            "final PSNR over {} trial(s): {mean:.3} +/- {std:.3} dB",
            finals.len()
        );
    }

    write_json(&with_suffix_ext(&output, ".manifest.json"), &cfg)?;
    write_json(
        &with_suffix_ext(&output, ".meta.json"),
        &RestoreMeta {
            kind_requested: cfg.kind,
            kind_resolved: kind,
            config_hash: solver_cfg.content_hash(),
            trials: trial_meta,
            psnr_mean,
            psnr_std,
        },
    )?;
    Ok(EXIT_OK)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

fn with_suffix_ext(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<i32> {
    let pred_files = list_images(&args.pred)?;
    let gt_files = list_images(&args.gt)?;
    let pred_names: BTreeSet<String> = pred_files.iter().map(|p| stem_of(p)).collect();
    let gt_names: BTreeSet<String> = gt_files.iter().map(|p| stem_of(p)).collect();
    let missing_gt: Vec<&String> = pred_names.difference(&gt_names).collect();
    let missing_pred: Vec<&String> = gt_names.difference(&pred_names).collect();
    if !missing_gt.is_empty() || !missing_pred.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "unmatched filenames; missing in gt: [{}], missing in pred: [{}]",
            missing_gt
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", "),
            missing_pred
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        )));
    }

    let stems: Vec<String> = pred_names.into_iter().collect();
    let pred_dir = args.pred.clone();
    let gt_dir = args.gt.clone();
    let rows = parallel_map(stems, |stem| {
        let pred_path = find_image(&pred_dir, stem)?;
        let gt_path = find_image(&gt_dir, stem)?;
        let pred = load_image(&pred_path)?;
        let gt = load_image(&gt_path)?;
        let kind = sidecar_kind(&gt_dir, stem).or_else(|| sidecar_kind(&pred_dir, stem));
        Ok(EvalRow {
            stem: stem.clone(),
            kind,
            step: step_of(stem),
            psnr: psnr(&pred, &gt)?,
            ssim: ssim(&pred, &gt)?,
        })
    });
    let rows: Vec<EvalRow> = rows.into_iter().collect::<Result<_>>()?;

    let mut csv = String::from("# unfold-restore evaluate schema v1\n");
    csv.push_str("image,kind,step,psnr,ssim\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            row.stem,
            row.kind.map_or("unknown", |k| k.as_str()),
            row.step,
            row.psnr,
            row.ssim
        ));
    }
    for kind in DegradationKind::ALL {
        let selected: Vec<&EvalRow> = rows.iter().filter(|r| r.kind == Some(kind)).collect();
        if selected.is_empty() {
            continue;
        }
        let n = selected.len() as f64;
        let mean_psnr = selected.iter().map(|r| r.psnr).sum::<f64>() / n;
        let mean_ssim = selected.iter().map(|r| r.ssim).sum::<f64>() / n;
        csv.push_str(&format!(
            "summary,{},all,{mean_psnr:.6},{mean_ssim:.6}\n",
            kind.as_str()
        ));
    }

    match &args.out {
        Some(path) => write_atomic(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

struct EvalRow {
    stem: String,
    kind: Option<DegradationKind>,
    step: String,
    psnr: f64,
    ssim: f64,
}

fn find_image(dir: &Path, stem: &str) -> Result<PathBuf> {
    for ext in ["png", "ppm"] {
        let p = dir.join(format!("{stem}.{ext}"));
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no image for stem '{stem}' in {}",
        dir.display()
    )))
}

fn sidecar_kind(dir: &Path, stem: &str) -> Option<DegradationKind> {
    let path = dir.join(format!("{stem}.json"));
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str::<SimParams>(&text)
        .ok()
        .map(|p| p.kind)
}

/// Step index parsed from a `_step<k>` or `.step<k>` name infix; `final`
/// otherwise.
fn step_of(stem: &str) -> String {
    for sep in ["_step", ".step"] {
        if let Some(at) = stem.rfind(sep) {
            let digits: String = stem[at + sep.len()..]
                .chars()
                .take_while(|c| c.is_ascii_digit())
                .collect();
            if !digits.is_empty() {
                return digits;
            }
        }
    }
    "final".into()
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let checks = verify_suite(args.fault)?;
    let mut all_pass = true;
    println!("{:<24} result", "check");
    for check in &checks {
        all_pass &= check.pass;
        println!(
            "{:<24} {} — {}",
            check.name,
            if check.pass { "PASS" } else { "FAIL" },
            check.detail
        );
    }
    Ok(if all_pass {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("64x48").unwrap(), (64, 48));
        assert!(parse_size("64").is_err());
        assert!(parse_size("0x4").is_err());
        assert!(parse_size("axb").is_err());
    }

    #[test]
    fn step_suffix_parsing() {
        assert_eq!(step_of("img_0001_step3"), "3");
        assert_eq!(step_of("b.step12"), "12");
        assert_eq!(step_of("plain"), "final");
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(
            exit_code_for(&Error::CgNoConvergence {
                residual: 1.0,
                iterations: 5
            }),
            EXIT_SOLVER
        );
        assert_eq!(
            exit_code_for(&Error::InvalidArgument("x".into())),
            EXIT_BAD_ARGS
        );
        assert_eq!(
            exit_code_for(&Error::Read {
                path: "x".into(),
                source: std::io::Error::other("nope")
            }),
            EXIT_IO
        );
    }

    #[test]
    fn run_config_rejects_unknown_keys() {
        let err = serde_json::from_str::<RunConfig>("{\"stepz\": 6}");
        assert!(err.is_err());
    }

    #[test]
    fn run_config_round_trips_through_json() {
        let cfg = RunConfig {
            steps: 4,
            kind: KindChoice::Rain,
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn prior_table_json_uses_uppercase_slot_keys() {
        let table = PriorTable::default();
        let json = serde_json::to_value(table).unwrap();
        assert!(json["rain"]["B"].is_object());
        assert!(json["haze"]["T"].is_object());
        assert!(json["lowlight"]["D"].is_object());
    }
}
