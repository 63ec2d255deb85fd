//! `slr`: command-line driver for sparse plus low-rank layer compression.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use slr_core::admm::{decompose, HyperParams, LayerProblem, Mode, Sample};
use slr_core::compress::{compression_rate, deserialize, export_csr, serialize, CompressedLayer};
use slr_core::infer::benchmark;
use slr_core::pipeline::compare::compare_nonlinear_linear;
use slr_core::pipeline::{layer_file_name, load_run, Overrides, Pipeline, PipelineConfig, Strategy};
use slr_core::synthetic::{gaussian, rng, PlantedSpec, StackSpec};
use slr_core::tensor::npy::{read_matrix, read_npy, write_matrix};
use slr_core::tensor::{Activation, Matrix};
use slr_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "slr",
    version,
    about = "Compress network layers into column-sparse plus low-rank parts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a single layer.
    Decompose(DecomposeArgs),
    /// Compress every layer of a config, in network order.
    Pipeline(PipelineArgs),
    /// Time a compressed layer against its dense original.
    Bench(BenchArgs),
    /// Fit one layer to its post-ReLU and to its linear response over a λ grid.
    CompareNl(CompareArgs),
    /// Write the sparse part of a compressed layer as CSR arrays.
    ExportCsr(ExportArgs),
    /// Describe a .slrl file, a run directory or an .npy file.
    Inspect(InspectArgs),
    /// Write a synthetic layer or stack with a matching config.
    Synth(SynthArgs),
}

/// Settings shared by the commands that run the solver.
#[derive(Args, Clone)]
struct Tuning {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    lambda1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda2: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Both,
    SparseOnly,
    LowrankOnly,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Both => Mode::Both,
            ModeArg::SparseOnly => Mode::SparseOnly,
            ModeArg::LowrankOnly => Mode::LowrankOnly,
        }
    }
}

impl Tuning {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            tol: self.tol,
            max_iter: self.max_iter,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            mode: self.mode.map(Into::into),
            output_dir: self.out.clone(),
        }
    }

    /// Loads the config, folds in the flags and resolves the output directory
    /// (flag, else the config's, relative to the config file).
    fn load(&self) -> Result<(Pipeline, PathBuf)> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required".into()))?;
        let (mut cfg, base) = PipelineConfig::load(path)?;
        cfg.apply(&self.overrides());
        let out = match &self.out {
            Some(dir) => dir.clone(),
            None => base.join(&cfg.output_dir),
        };
        Ok((Pipeline::load(cfg, &base)?, out))
    }
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    tuning: Tuning,
    /// Layer to take from the config; defaults to the first one.
    #[arg(long)]
    layer: Option<String>,
    /// Weights file, instead of a config.
    #[arg(long, conflicts_with = "config")]
    weights: Option<PathBuf>,
    /// Sample inputs, paired in order with --y.
    #[arg(long, requires = "weights")]
    x: Vec<PathBuf>,
    #[arg(long, requires = "weights")]
    y: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "relu")]
    activation: ActivationArg,
    /// Penalty parameter t.
    #[arg(long, allow_negative_numbers = true)]
    t: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    Identity,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Activation {
        match a {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Identity => Activation::Identity,
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, value_enum, default_value = "asymmetric")]
    strategy: StrategyArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Symmetric,
    Asymmetric,
}

#[derive(Args)]
struct BenchArgs {
    /// Compressed layer file.
    #[arg(long, conflicts_with = "run")]
    layer: Option<PathBuf>,
    /// Dense weights the layer approximates.
    #[arg(long, requires = "layer")]
    weights: Option<PathBuf>,
    /// Input columns; random Gaussian columns when absent.
    #[arg(long)]
    x: Option<PathBuf>,
    /// Number of random input columns.
    #[arg(long, default_value_t = 1024)]
    columns: usize,
    /// A pipeline output directory; every layer is timed on the config's
    /// lowered inputs.
    #[arg(long, requires = "config")]
    run: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also append the report lines to DIR/bench.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    tuning: Tuning,
    /// Layer to compare; defaults to the first layer that is not skipped.
    #[arg(long)]
    layer: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    /// Compressed layer file.
    #[arg(long)]
    layer: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "stack")]
    kind: SynthKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// One 16×32 layer with recorded samples.
    Planted,
    /// Three fully connected layers with raw inputs.
    Stack,
}

/// `println!` that exits quietly when stdout is a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = writeln!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    }};
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Decompose(a) => run_decompose(a),
        Command::Pipeline(a) => run_pipeline(a),
        Command::Bench(a) => run_bench(a),
        Command::CompareNl(a) => run_compare(a),
        Command::ExportCsr(a) => run_export(a),
        Command::Inspect(a) => run_inspect(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if e.is_io() {
        4
    } else {
        2
    }
}

fn layer_index(cfg: &PipelineConfig, name: Option<&str>, skip_skipped: bool) -> Result<usize> {
    match name {
        Some(n) => cfg
            .layers
            .iter()
            .position(|l| l.name == n)
            .ok_or_else(|| Error::Config(format!("no layer named `{n}`"))),
        None if skip_skipped => cfg
            .layers
            .iter()
            .position(|l| !l.skip)
            .ok_or_else(|| Error::Config("every layer is skipped".into())),
        None => Ok(0),
    }
}

fn layer_line(layer: &CompressedLayer, path: &Path) -> String {
    let cr = compression_rate(layer);
    json!({
        "layer": layer.metadata.name,
        "file": path,
        "shape": layer.original_shape,
        "nnz_cols": layer.sparse.nnz_cols(),
        "rank": layer.lowrank.rank(),
        "cr": cr,
        "description": cr.describe(),
        "iterations": layer.metadata.iterations,
        "residual": layer.metadata.residual,
        "converged": layer.metadata.converged,
    })
    .to_string()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        context: format!("creating {}", dir.display()),
        source: e,
    })
}

fn run_decompose(a: DecomposeArgs) -> Result<()> {
    let (name, problem, mut hp, out) = match &a.weights {
        Some(w) => {
            if a.x.len() != a.y.len() || a.x.is_empty() {
                return Err(Error::Config("give matching, nonempty --x and --y lists".into()));
            }
            let samples =
                a.x.iter()
                    .zip(&a.y)
                    .map(|(x, y)| {
                        Ok(Sample {
                            x: read_matrix(x)?,
                            y: read_matrix(y)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
            let problem = LayerProblem::new(read_matrix(w)?, samples, a.activation.into())
                .map_err(|e| Error::Config(e.to_string()))?;
            let mut cfg_hp = HyperParams::default();
            let o = a.tuning.overrides();
            cfg_hp.sgd.seed = o.seed.unwrap_or(0);
            if let Some(v) = o.lambda1 {
                cfg_hp.lambda1 = v;
            }
            if let Some(v) = o.lambda2 {
                cfg_hp.lambda2 = v;
            }
            if let Some(v) = o.tol {
                cfg_hp.tol = v;
            }
            if let Some(v) = o.max_iter {
                cfg_hp.max_iter = v;
            }
            if let Some(v) = o.mode {
                cfg_hp.mode = v;
            }
            let stem = w
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "layer".into());
            (
                stem,
                problem,
                cfg_hp,
                a.tuning.out.clone().unwrap_or_else(|| "out".into()),
            )
        }
        None => {
            let (pipeline, out) = a.tuning.load()?;
            let k = layer_index(&pipeline.config, a.layer.as_deref(), false)?;
            let samples = pipeline.clean_samples()?.swap_remove(k);
            let layer = &pipeline.layers[k];
            let problem = LayerProblem::new(layer.w.clone(), samples, layer.activation)
                .map_err(|e| Error::Config(e.to_string()))?;
            let hp = pipeline.config.layer_hyperparams(k)?;
            (pipeline.config.layers[k].name.clone(), problem, hp, out)
        }
    };
    if let Some(t) = a.t {
        hp.t = t;
    }
    hp.validate().map_err(|e| Error::Config(e.to_string()))?;
    if !hp.in_recommended_regime() {
        eprintln!(
            "note: λ1 = {}, λ2 = {} is outside the usual regime (λ1 in [0.08, 0.3], λ2/λ1 in [2.5, 3])",
            hp.lambda1, hp.lambda2
        );
    }
    let d = decompose(&problem, &hp)?;
    let layer = CompressedLayer::from_decomposition(&name, &d, &hp, 0.0, 1e-10)?;
    create_dir(&out)?;
    let path = out.join(layer_file_name(&name));
    serialize(&layer, &path)?;
    say!("{}", layer_line(&layer, &path));
    Ok(())
}

fn run_pipeline(a: PipelineArgs) -> Result<()> {
    let (pipeline, out) = a.tuning.load()?;
    let strategy = match a.strategy {
        StrategyArg::Symmetric => Strategy::Symmetric,
        StrategyArg::Asymmetric => Strategy::Asymmetric,
    };
    let run = pipeline.run(strategy)?;
    run.write(&out)?;
    for (layer, row) in run.layers.iter().zip(&run.summary.layers) {
        say!("{}", layer_line(layer, &out.join(&row.file)));
        if let Some(why) = &row.failed {
            eprintln!("layer `{}` failed and was passed through: {why}", row.name);
        }
    }
    eprintln!("total: {} -> {}", run.summary.total_description, out.display());
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<()> {
    if a.repetitions < 5 {
        return Err(Error::Config("--repetitions must be at least 5".into()));
    }
    let mut cases: Vec<(CompressedLayer, Matrix, Matrix)> = Vec::new();
    if let Some(path) = &a.layer {
        let layer = deserialize(path)?;
        let w = match &a.weights {
            Some(p) => read_matrix(p)?,
            None => layer.densify(),
        };
        let x = match &a.x {
            Some(p) => read_matrix(p)?,
            None => gaussian(&mut rng(a.seed), w.cols(), a.columns, 1.0),
        };
        cases.push((layer, w, x));
    } else if let Some(dir) = &a.run {
        let cfg_path = a.config.as_ref().expect("clap requires --config with --run");
        let (cfg, base) = PipelineConfig::load(cfg_path)?;
        let pipeline = Pipeline::load(cfg, &base)?;
        let run = load_run(dir)?;
        let samples = pipeline.clean_samples()?;
        for ((layer, net), s) in run.layers.into_iter().zip(&pipeline.layers).zip(samples) {
            let xs: Vec<&Matrix> = s.iter().map(|s| &s.x).collect();
            cases.push((layer, net.w.clone(), Matrix::hstack(&xs)?));
        }
    } else {
        return Err(Error::Config("give --layer or --run".into()));
    }

    let mut lines = String::new();
    for (layer, w, x) in &cases {
        let report = benchmark(layer, w, x, a.repetitions)?;
        let line = report.to_json_line();
        say!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let path = dir.join("bench.jsonl");
        use std::io::Write;
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| f.write_all(lines.as_bytes()))
            .map_err(|e| Error::Io {
                context: format!("writing {}", path.display()),
                source: e,
            })?;
    }
    Ok(())
}

fn run_compare(a: CompareArgs) -> Result<()> {
    let (pipeline, out) = a.tuning.load()?;
    let cfg = &pipeline.config;
    let k = layer_index(cfg, a.layer.as_deref(), true)?;
    let samples = pipeline.clean_samples()?.swap_remove(k);
    let problem = LayerProblem::new(pipeline.layers[k].w.clone(), samples, Activation::Relu)
        .map_err(|e| Error::Config(e.to_string()))?;
    let hp = cfg.layer_hyperparams(k)?;
    let table = compare_nonlinear_linear(
        &problem,
        &cfg.grid(),
        &hp,
        cfg.seed,
        cfg.defaults.zero_tol,
        cfg.defaults.sv_tol,
    )?;
    if table.evaluated_on_training {
        eprintln!("note: fewer than 5 samples, errors are measured on the training samples");
    }
    create_dir(&out)?;
    let path = out.join(format!("compare_{}.csv", cfg.layers[k].name));
    let csv = table.to_csv();
    fs::write(&path, &csv).map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })?;
    say!("{}", csv.trim_end());
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run_export(a: ExportArgs) -> Result<()> {
    let layer = deserialize(&a.layer)?;
    let stem = a
        .layer
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| layer.metadata.name.clone());
    for p in export_csr(&layer, &a.out, &stem)? {
        say!("{}", p.display());
    }
    Ok(())
}

fn run_inspect(a: InspectArgs) -> Result<()> {
    let p = &a.path;
    let value = if p.is_dir() {
        let run = load_run(p)?;
        serde_json::to_value(&run.summary).expect("summary serializes")
    } else if p.extension().is_some_and(|e| e == "npy") {
        let arr = read_npy(p)?;
        let finite = arr.data.iter().all(|v| v.is_finite());
        json!({ "file": p, "shape": arr.shape, "finite": finite })
    } else {
        let layer = deserialize(p)?;
        let cr = compression_rate(&layer);
        json!({
            "file": p,
            "shape": layer.original_shape,
            "nz_col_indices": layer.sparse.nz_col_indices,
            "rank": layer.lowrank.rank(),
            "params": layer.param_counts,
            "cr": cr,
            "description": cr.describe(),
            "metadata": layer.metadata,
        })
    };
    say!(
        "{}",
        serde_json::to_string_pretty(&value).expect("json value serializes")
    );
    Ok(())
}

fn write(path: &Path, m: &Matrix) -> Result<String> {
    write_matrix(path, m)?;
    Ok(path.file_name().unwrap().to_string_lossy().into_owned())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    create_dir(&a.out)?;
    let config = match a.kind {
        SynthKind::Planted => {
            let planted = PlantedSpec::default().generate(a.seed);
            let weights = write(&a.out.join("layer.npy"), &planted.problem.w)?;
            let mut samples = Vec::new();
            for (i, s) in planted.problem.samples.iter().enumerate() {
                let x = write(&a.out.join(format!("layer_x{i}.npy")), &s.x)?;
                let y = write(&a.out.join(format!("layer_y{i}.npy")), &s.y)?;
                samples.push(json!({ "x": x, "y": y }));
            }
            json!({
                "seed": a.seed,
                "defaults": { "hyperparams": { "lambda1": 0.1, "lambda2": 0.275, "t": 0.01 } },
                "layers": [{ "name": "layer", "weights": weights, "samples": samples }],
            })
        }
        SynthKind::Stack => {
            let stack = StackSpec::default().generate(a.seed);
            let inputs = write(&a.out.join("inputs.npy"), &stack.inputs)?;
            let mut layers = Vec::new();
            for (i, w) in stack.weights.iter().enumerate() {
                let name = format!("fc{}", i + 1);
                let weights = write(&a.out.join(format!("{name}.npy")), w)?;
                layers.push(json!({ "name": name, "weights": weights }));
            }
            layers[0]["hyperparams"] = json!({ "lambda1": 40, "lambda2": 110 });
            json!({
                "seed": a.seed,
                "inputs": inputs,
                "defaults": {
                    "max_columns": 128,
                    "hyperparams": { "lambda1": 2, "lambda2": 5.5, "t": 30, "max_iter": 1000 },
                },
                "layers": layers,
            })
        }
    };
    let path = a.out.join("config.json");
    let mut text = serde_json::to_string_pretty(&config).expect("json value serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })?;
    say!("{}", path.display());
    Ok(())
}
