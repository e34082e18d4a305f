//! `vesselfix` command line: synthesis, damage, reconnection, metrics and
//! the experiment harnesses.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use vesselfix::disconnect::{generate_pair, write_pair, DisconnectionSpec};
use vesselfix::experiment::{
    convergence_csv, cut_corpus, derive_seed, run_ablation, run_convergence, Application,
    ExperimentPlan,
};
use vesselfix::image::{load_grid, load_mask, save_mask, BinaryMask};
use vesselfix::metrics::{batch_csv, report, report_csv, MetricsReport};
use vesselfix::reconnect::{
    iterate_with, model_reconnector, EndpointBridger, IterateOptions, Reconnector, TileOptions,
};
use vesselfix::synth::{generate_tree, TreeParams};

#[derive(Parser)]
#[command(
    name = "vesselfix",
    version,
    about = "Vascular mask disconnection and reconnection toolkit"
)]
struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic vascular trees.
    Synth(SynthArgs),
    /// Damage a connected mask into a (connected, disconnected) pair directory.
    Disconnect(DisconnectArgs),
    /// Apply a reconnection operator until it reaches a fixed point.
    Reconnect(ReconnectArgs),
    /// Score segmentations against references.
    Metrics(MetricsArgs),
    /// Run the ablation, convergence or dataset harnesses.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Args)]
struct TreeArgs {
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 4.0)]
    root_radius: f64,
    #[arg(long, default_value_t = 6)]
    depth: u32,
    #[arg(long, default_value_t = 45.0)]
    length_min: f64,
    #[arg(long, default_value_t = 70.0)]
    length_max: f64,
    /// Branching half-angle range, degrees.
    #[arg(long, default_value_t = 20.0)]
    angle_min: f64,
    #[arg(long, default_value_t = 45.0)]
    angle_max: f64,
    /// Murray exponent of the radius decay.
    #[arg(long, default_value_t = 3.0)]
    gamma: f64,
    /// Amplitude of the sinusoidal centerline perturbation, pixels.
    #[arg(long, default_value_t = 2.0)]
    tortuosity: f64,
}

impl TreeArgs {
    fn params(&self, seed: u64) -> TreeParams {
        TreeParams {
            width: self.width,
            height: self.height,
            root_radius: self.root_radius,
            depth: self.depth,
            length_range: (self.length_min, self.length_max),
            angle_range: (self.angle_min, self.angle_max),
            gamma: self.gamma,
            tortuosity: self.tortuosity,
            seed,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    tree: TreeArgs,
    /// Number of trees; with more than one, `--out` is a directory.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DamageArgs {
    /// Mean disconnection size, pixels.
    #[arg(long, default_value_t = 8.0)]
    s: f64,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    #[arg(long = "n-disc", default_value_t = 15)]
    n_disc: usize,
    #[arg(long = "n-art", default_value_t = 5)]
    n_art: usize,
}

impl DamageArgs {
    fn spec(&self, seed: u64) -> DisconnectionSpec {
        DisconnectionSpec {
            s: self.s,
            sigma: self.sigma,
            n_disconnections: self.n_disc,
            n_artifacts: self.n_art,
            seed,
        }
    }
}

#[derive(Args)]
struct DisconnectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Pair directory to create.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    damage: DamageArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum OpKind {
    Baseline,
    Model,
}

#[derive(Args)]
struct OperatorArgs {
    #[arg(long, value_enum, default_value = "baseline")]
    op: OpKind,
    /// ONNX model for `--op model`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long = "d-max", default_value_t = 12.0)]
    d_max: f64,
    /// Degrees.
    #[arg(long = "angle-tol", default_value_t = 35.0)]
    angle_tol: f64,
    /// Endpoint pairs of different components closer than this skip the angle test.
    #[arg(long = "near-gap", default_value_t = 4.0)]
    near_gap: f64,
    /// Patch extent, comma separated x,y[,z]; defaults to 64 per axis in 2D, 32 in 3D.
    #[arg(long, value_delimiter = ',')]
    patch: Vec<usize>,
    /// Patch overlap per axis; defaults to half the patch.
    #[arg(long, value_delimiter = ',')]
    overlap: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

impl OperatorArgs {
    fn build(
        &self,
        ndim: usize,
        d_max: Option<f64>,
        model: Option<&Path>,
    ) -> Result<Box<dyn Reconnector>> {
        Ok(match self.op {
            OpKind::Baseline => Box::new(EndpointBridger::with_near_gap(
                d_max.unwrap_or(self.d_max),
                self.angle_tol,
                self.near_gap,
            )),
            OpKind::Model => {
                let path = model
                    .or(self.model.as_deref())
                    .context("--op model needs --model")?;
                let mut tiles = if ndim == 2 {
                    TileOptions::default_2d()
                } else {
                    TileOptions::default_3d()
                };
                if !self.patch.is_empty() {
                    tiles.patch = self.patch.clone();
                    tiles.overlap = self.patch.iter().map(|p| p / 2).collect();
                }
                if !self.overlap.is_empty() {
                    tiles.overlap = self.overlap.clone();
                }
                tiles.threshold = self.threshold;
                Box::new(model_reconnector(path, tiles)?)
            }
        })
    }
}

#[derive(Args)]
struct IterArgs {
    #[arg(long = "max-iter", default_value_t = 20)]
    max_iter: usize,
    /// Stop once consecutive results differ by at most this many voxels.
    #[arg(long, default_value_t = 0)]
    tol: usize,
}

impl IterArgs {
    fn options(&self) -> IterateOptions {
        IterateOptions {
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Args)]
struct ReconnectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    operator: OperatorArgs,
    #[command(flatten)]
    iter: IterArgs,
    /// Ground truth for per-iteration metrics in the trace.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Directory receiving every intermediate mask as `iter_NNN.<ext>`.
    #[arg(long)]
    save_steps: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Segmentation mask, or a directory of masks.
    #[arg(long)]
    seg: PathBuf,
    /// Reference mask, or a directory with identically named masks.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Soft prediction (VMSF) for AUC; single-image mode only.
    #[arg(long)]
    prob: Option<PathBuf>,
    /// `.csv` or `.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorpusArgs {
    /// Directory of connected tree masks; synthesized when absent.
    #[arg(long)]
    trees: Option<PathBuf>,
    /// Number of synthesized trees.
    #[arg(long = "n-trees", default_value_t = 20)]
    n_trees: usize,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Train-size x test-size robustness table.
    Ablation(AblationArgs),
    /// Per-iteration metrics of the fixed-point iteration.
    Convergence(ConvergenceArgs),
    /// Write training pairs for the trainer.
    Dataset(DatasetArgs),
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(
        long = "train-sizes",
        value_delimiter = ',',
        default_value = "6,8,10,12"
    )]
    train_sizes: Vec<f64>,
    #[arg(
        long = "test-sizes",
        value_delimiter = ',',
        default_value = "6,8,10,12"
    )]
    test_sizes: Vec<f64>,
    #[arg(long = "test-sigma", default_value_t = 4.0)]
    test_sigma: f64,
    #[arg(long = "test-n-disc", default_value_t = 15)]
    test_n_disc: usize,
    #[arg(long = "test-n-art", default_value_t = 5)]
    test_n_art: usize,
    #[command(flatten)]
    operator: OperatorArgs,
    /// Models per train size as `SIZE=PATH`, for `--op model`.
    #[arg(long = "model-for", value_parser = parse_model_for)]
    model_for: Vec<(f64, PathBuf)>,
    /// Iterate each operator to a fixed point instead of applying it once.
    #[arg(long)]
    iterate: bool,
    #[command(flatten)]
    iter: IterArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    damage: DamageArgs,
    #[command(flatten)]
    operator: OperatorArgs,
    #[command(flatten)]
    iter: IterArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DatasetArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    damage: DamageArgs,
    /// Pairs generated per tree, each with its own seed.
    #[arg(long = "pairs-per-tree", default_value_t = 1)]
    pairs_per_tree: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_model_for(s: &str) -> Result<(f64, PathBuf), String> {
    let (size, path) = s.split_once('=').ok_or("expected SIZE=PATH")?;
    let size: f64 = size
        .parse()
        .map_err(|e| format!("bad size {size:?}: {e}"))?;
    Ok((size, PathBuf::from(path)))
}

/// A failure tied to one input, reported as a JSON line on stderr.
struct Failure {
    item: String,
    error: anyhow::Error,
}

fn report_failures(failures: &[Failure]) {
    for f in failures {
        eprintln!(
            "{}",
            json!({ "item": f.item, "error": format!("{:#}", f.error) })
        );
    }
}

fn progress(quiet: bool, msg: impl std::fmt::Display) {
    if !quiet {
        eprintln!("{msg}");
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn mask_ext(mask: &BinaryMask) -> &'static str {
    if mask.dims().ndim() == 2 {
        "pgm"
    } else {
        "vmsk"
    }
}

fn is_mask_file(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "vmsk"))
}

/// Mask files of a directory, sorted by path.
fn mask_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.is_file() && is_mask_file(p));
    files.sort();
    Ok(files)
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Named connected masks: loaded from `--trees` or synthesized from the seed.
fn load_corpus(args: &CorpusArgs, seed: u64) -> Result<Vec<(String, BinaryMask)>> {
    match &args.trees {
        Some(dir) => {
            let files = mask_files(dir)?;
            if files.is_empty() {
                bail!("no .pgm or .vmsk masks in {}", dir.display());
            }
            files
                .par_iter()
                .map(|p| {
                    Ok((
                        file_stem(p),
                        load_mask(p).with_context(|| p.display().to_string())?,
                    ))
                })
                .collect()
        }
        None => (0..args.n_trees)
            .into_par_iter()
            .map(|k| {
                let params = TreeParams {
                    seed: derive_seed(seed, u64::MAX, k as u64),
                    ..TreeParams::default()
                };
                Ok((format!("tree_{k:03}"), generate_tree(&params)?))
            })
            .collect(),
    }
}

fn synth(args: &SynthArgs, seed: u64, quiet: bool) -> Result<Vec<Failure>> {
    if args.count == 1 {
        let mask = generate_tree(&args.tree.params(seed))?;
        save_mask(&mask, &args.out)?;
        progress(quiet, format_args!("wrote {}", args.out.display()));
        return Ok(Vec::new());
    }
    fs::create_dir_all(&args.out)?;
    let failures = (0..args.count)
        .into_par_iter()
        .filter_map(|k| {
            let path = args.out.join(format!("tree_{k:03}.pgm"));
            let res = generate_tree(&args.tree.params(derive_seed(seed, u64::MAX, k as u64)))
                .map_err(anyhow::Error::from)
                .and_then(|m| Ok(save_mask(&m, &path)?));
            res.err().map(|error| Failure {
                item: path.display().to_string(),
                error,
            })
        })
        .collect();
    progress(
        quiet,
        format_args!("wrote {} trees to {}", args.count, args.out.display()),
    );
    Ok(failures)
}

fn disconnect(args: &DisconnectArgs, seed: u64, quiet: bool) -> Result<()> {
    let mask = load_mask(&args.input)?;
    let spec = args.damage.spec(seed);
    let sample = generate_pair(&mask, &spec)?;
    write_pair(&args.out, &sample, &spec)?;
    progress(
        quiet,
        format_args!(
            "removed {} voxels, added {} voxels -> {}",
            sample.removed.len(),
            sample.added.len(),
            args.out.display()
        ),
    );
    Ok(())
}

fn reconnect(args: &ReconnectArgs, quiet: bool) -> Result<()> {
    let mask = load_mask(&args.input)?;
    let reference = args.reference.as_ref().map(load_mask).transpose()?;
    let op = args.operator.build(mask.dims().ndim(), None, None)?;
    if let Some(dir) = &args.save_steps {
        fs::create_dir_all(dir)?;
    }
    let mut save_err = None;
    let (out, trace) = iterate_with(
        op.as_ref(),
        &mask,
        args.iter.options(),
        reference.as_ref(),
        |k, m| {
            if let Some(dir) = &args.save_steps {
                if let Err(e) = save_mask(m, dir.join(format!("iter_{k:03}.{}", mask_ext(m)))) {
                    save_err.get_or_insert(e);
                }
            }
        },
    )?;
    if let Some(e) = save_err {
        return Err(e.into());
    }
    save_mask(&out, &args.out)?;
    if let Some(path) = &args.trace {
        write_text(path, &serde_json::to_string_pretty(&trace)?)?;
    }
    progress(
        quiet,
        format_args!(
            "{}: {} iterations, converged: {}, diffs {:?}",
            op.name(),
            trace.iterations,
            trace.converged,
            trace.diffs
        ),
    );
    Ok(())
}

fn write_reports(out: &Path, rows: &[(String, MetricsReport)], single: bool) -> Result<()> {
    let is_json = out.extension().is_some_and(|e| e == "json");
    let text = if is_json {
        let objs: Vec<_> = rows
            .iter()
            .map(|(name, r)| {
                let mut v = serde_json::to_value(r).expect("report serializes");
                v.as_object_mut()
                    .expect("object")
                    .insert("image".into(), json!(name));
                v
            })
            .collect();
        serde_json::to_string_pretty(&objs)?
    } else if single {
        report_csv(&rows[0].1)
    } else {
        batch_csv(rows)
    };
    write_text(out, &text)
}

fn metrics(args: &MetricsArgs) -> Result<Vec<Failure>> {
    if args.seg.is_dir() {
        if args.prob.is_some() {
            bail!("--prob is only supported for a single segmentation");
        }
        let files = mask_files(&args.seg)?;
        if files.is_empty() {
            bail!("no masks in {}", args.seg.display());
        }
        let results: Vec<Result<(String, MetricsReport), Failure>> = files
            .par_iter()
            .map(|p| {
                let name = p.file_name().expect("file").to_string_lossy().into_owned();
                let run = || -> Result<MetricsReport> {
                    let seg = load_mask(p)?;
                    let reference = load_mask(args.reference.join(&name))?;
                    Ok(report(&seg, &reference, None)?)
                };
                run().map(|r| (name.clone(), r)).map_err(|error| Failure {
                    item: p.display().to_string(),
                    error,
                })
            })
            .collect();
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for r in results {
            match r {
                Ok(row) => rows.push(row),
                Err(f) => failures.push(f),
            }
        }
        if !rows.is_empty() {
            write_reports(&args.out, &rows, false)?;
        }
        return Ok(failures);
    }
    let seg = load_mask(&args.seg)?;
    let reference = load_mask(&args.reference)?;
    let prob = args.prob.as_ref().map(load_grid).transpose()?;
    let r = report(&seg, &reference, prob.as_ref())?;
    write_reports(&args.out, &[(file_stem(&args.seg), r)], true)?;
    Ok(Vec::new())
}

fn ablation(args: &AblationArgs, seed: u64, quiet: bool) -> Result<()> {
    let corpus = load_corpus(&args.corpus, seed)?;
    let trees: Vec<BinaryMask> = corpus.into_iter().map(|(_, m)| m).collect();
    let ndim = trees[0].dims().ndim();
    let mut plan = ExperimentPlan::new(args.train_sizes.clone(), args.test_sizes.clone(), seed);
    plan.test_spec = DisconnectionSpec {
        sigma: args.test_sigma,
        n_disconnections: args.test_n_disc,
        n_artifacts: args.test_n_art,
        ..DisconnectionSpec::default()
    };
    if args.iterate {
        plan.application = Application::Iterate(args.iter.options());
    }
    let mut owned = Vec::new();
    for &s in &args.train_sizes {
        let op = match args.operator.op {
            // the baseline's reach is tuned to the gap size it is meant for
            OpKind::Baseline => args.operator.build(ndim, Some(s), None)?,
            OpKind::Model => {
                let path = args
                    .model_for
                    .iter()
                    .find(|(t, _)| *t == s)
                    .map(|(_, p)| p.as_path());
                match path.or(args.operator.model.as_deref()) {
                    Some(p) => args.operator.build(ndim, None, Some(p))?,
                    None => continue,
                }
            }
        };
        owned.push((s, op));
    }
    let ops: Vec<(f64, &dyn Reconnector)> = owned.iter().map(|(s, op)| (*s, op.as_ref())).collect();
    let table = run_ablation(&trees, &plan, &ops)?;
    write_text(&args.out, &table.to_csv())?;
    progress(quiet, format_args!("wrote {}", args.out.display()));
    Ok(())
}

fn convergence(args: &ConvergenceArgs, seed: u64, quiet: bool) -> Result<()> {
    let corpus = load_corpus(&args.corpus, seed)?;
    let trees: Vec<BinaryMask> = corpus.iter().map(|(_, m)| m.clone()).collect();
    let samples = cut_corpus(&trees, |k| args.damage.spec(derive_seed(seed, 0, k as u64)))?;
    let images: Vec<(String, BinaryMask, BinaryMask)> = corpus
        .into_iter()
        .zip(samples)
        .map(|((name, _), s)| (name, s.disconnected, s.connected))
        .collect();
    let op = args.operator.build(images[0].1.dims().ndim(), None, None)?;
    let runs = run_convergence(op.as_ref(), &images, args.iter.options())?;
    write_text(&args.out, &convergence_csv(&runs))?;
    let converged = runs.iter().filter(|r| r.converged).count();
    progress(
        quiet,
        format_args!(
            "{converged}/{} images converged; wrote {}",
            runs.len(),
            args.out.display()
        ),
    );
    Ok(())
}

fn dataset(args: &DatasetArgs, seed: u64, quiet: bool) -> Result<Vec<Failure>> {
    let corpus = load_corpus(&args.corpus, seed)?;
    let jobs: Vec<(usize, usize)> = (0..corpus.len())
        .flat_map(|t| (0..args.pairs_per_tree).map(move |j| (t, j)))
        .collect();
    let failures: Vec<Failure> = jobs
        .par_iter()
        .filter_map(|&(t, j)| {
            let (name, mask) = &corpus[t];
            let dir = args.out.join(format!("{name}_{j:02}"));
            let spec = args.damage.spec(derive_seed(seed, 1 + j as u64, t as u64));
            let res = generate_pair(mask, &spec)
                .and_then(|s| write_pair(&dir, &s, &spec))
                .map_err(anyhow::Error::from);
            res.err().map(|error| Failure {
                item: dir.display().to_string(),
                error,
            })
        })
        .collect();
    progress(
        quiet,
        format_args!(
            "wrote {} pairs to {}",
            jobs.len() - failures.len(),
            args.out.display()
        ),
    );
    Ok(failures)
}

fn run(cli: &Cli) -> Result<Vec<Failure>> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()?;
    }
    let (seed, quiet) = (cli.seed, cli.quiet);
    Ok(match &cli.command {
        Command::Synth(a) => synth(a, seed, quiet)?,
        Command::Disconnect(a) => disconnect(a, seed, quiet).map(|_| Vec::new())?,
        Command::Reconnect(a) => reconnect(a, quiet).map(|_| Vec::new())?,
        Command::Metrics(a) => metrics(a)?,
        Command::Experiment(ExperimentCommand::Ablation(a)) => {
            ablation(a, seed, quiet).map(|_| Vec::new())?
        }
        Command::Experiment(ExperimentCommand::Convergence(a)) => {
            convergence(a, seed, quiet).map(|_| Vec::new())?
        }
        Command::Experiment(ExperimentCommand::Dataset(a)) => dataset(a, seed, quiet)?,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!(
                "{}",
                json!({ "item": "arguments", "error": msg.trim_end() })
            );
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            report_failures(&failures);
            ExitCode::FAILURE
        }
        Err(error) => {
            report_failures(&[Failure {
                item: String::new(),
                error,
            }]);
            ExitCode::FAILURE
        }
    }
}
