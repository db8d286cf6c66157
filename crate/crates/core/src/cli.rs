//! Operator entry points behind the `mivae` binary: train/evaluate/visualize
//! commands, config handling, and figure/report emission.
//!
//! Exit codes: 0 ok, 1 user error (bad flags, config, files), 2 internal
//! error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{gaussian_blobs_2d, make_toy_joint, Dataset, ToyJointKind};
use crate::error::{Error, Result};
use crate::mi_eval::{
    brute_force_mi, categorical_accuracy, categorical_prob_histogram, kl_upper_bound,
    mi_lower_bound, onehot_label_counts, MiEvalBudget, ToyVae,
};
use crate::models::{load_checkpoint, VaeModel};
use crate::training::train;

#[derive(Parser)]
#[command(
    name = "mivae",
    about = "Variational autoencoders with variational mutual-information maximization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints + metrics.
    Train(TrainArgs),
    /// Evaluate MI bounds and categorical diagnostics for a checkpoint.
    Eval(EvalArgs),
    /// Decode a grid sweeping one or two Gaussian latent components.
    Traverse(TraverseArgs),
    /// Decode each anchor under every categorical one-hot.
    CatTraverse(CatTraverseArgs),
    /// Fit a Gaussian mixture to synthetic clusters with EM.
    EmDemo(EmDemoArgs),
    /// Exercise the MI bound sandwich on an enumerable toy joint.
    ToyMi(ToyMiArgs),
}

/// Flags shared by every command that reads a dataset. Each mirrors a key in
/// the config file's [data] section and overrides it when given.
#[derive(Args, Clone, Default)]
struct DataFlags {
    /// IDX image file (gzip accepted)
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Base directory for relative dataset paths (default: $MIVAE_DATA_DIR)
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Synthetic digit sample count used when no image file is given
    #[arg(long)]
    synthetic: Option<usize>,
    /// Pixel preprocessing: none | threshold | stochastic
    #[arg(long)]
    binarize: Option<String>,
    /// Threshold for --binarize threshold
    #[arg(long)]
    threshold: Option<f64>,
}

impl DataFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.images {
            cfg.data.images = Some(v.clone());
        }
        if let Some(v) = &self.labels {
            cfg.data.labels = Some(v.clone());
        }
        if let Some(v) = &self.data_dir {
            cfg.data.data_dir = Some(v.clone());
        }
        if let Some(v) = self.synthetic {
            cfg.data.synthetic = v;
        }
        if let Some(v) = &self.binarize {
            cfg.data.binarize = v.clone();
        }
        if let Some(v) = self.threshold {
            cfg.data.threshold = v;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Config file (TOML); flags below override its keys
    #[arg(long)]
    config: Option<PathBuf>,

    #[command(flatten)]
    data: DataFlags,

    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,

    #[arg(long)]
    gaussian_dim: Option<usize>,
    #[arg(long)]
    categorical_k: Option<usize>,
    /// Hidden layer widths, comma separated (e.g. 512,256)
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    q_hidden: Option<String>,
    /// none | categorical | gauss:i,j,...
    #[arg(long)]
    mi_target: Option<String>,

    /// elbo | beta | capacity
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    capacity: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mc_samples: Option<usize>,

    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_vae: Option<f64>,
    #[arg(long)]
    lr_q: Option<f64>,
    #[arg(long)]
    q_steps: Option<usize>,
    #[arg(long)]
    tau_start: Option<f64>,
    #[arg(long)]
    tau_end: Option<f64>,
    /// constant | exponential
    #[arg(long)]
    tau_decay: Option<String>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
}

fn parse_dims(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::config(format!("bad layer width '{s}': {e}")))
        })
        .collect()
}

impl TrainArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.data.apply(&mut cfg);
        if let Some(v) = self.seed {
            cfg.run.seed = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.run.out_dir = v.clone();
        }
        if let Some(v) = self.gaussian_dim {
            cfg.model.gaussian_dim = v;
        }
        if let Some(v) = self.categorical_k {
            cfg.model.categorical_k = v;
        }
        if let Some(v) = &self.hidden {
            cfg.model.hidden = parse_dims(v)?;
        }
        if let Some(v) = &self.q_hidden {
            cfg.model.q_hidden = parse_dims(v)?;
        }
        if let Some(v) = &self.mi_target {
            cfg.model.mi_target = v.clone();
        }
        if let Some(v) = &self.variant {
            cfg.objective.variant = v.clone();
        }
        if let Some(v) = self.beta {
            cfg.objective.beta = v;
        }
        if let Some(v) = self.gamma {
            cfg.objective.gamma = v;
        }
        if let Some(v) = self.capacity {
            cfg.objective.capacity = v;
        }
        if let Some(v) = self.lambda {
            cfg.objective.lambda = v;
        }
        if let Some(v) = self.mc_samples {
            cfg.objective.mc_samples = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.lr_vae {
            cfg.train.lr_vae = v;
        }
        if let Some(v) = self.lr_q {
            cfg.train.lr_q = v;
        }
        if let Some(v) = self.q_steps {
            cfg.train.q_steps = v;
        }
        if let Some(v) = self.tau_start {
            cfg.train.tau_start = v;
        }
        if let Some(v) = self.tau_end {
            cfg.train.tau_end = v;
        }
        if let Some(v) = &self.tau_decay {
            cfg.train.tau_decay = v.clone();
        }
        if let Some(v) = self.eval_every {
            cfg.train.eval_every = v;
        }
        if let Some(v) = self.grad_clip {
            cfg.train.grad_clip = v;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fresh-Q training steps for the lower bound
    #[arg(long, default_value_t = 400)]
    budget: usize,
    #[arg(long, default_value = "mivae_eval")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TraverseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One or two Gaussian component indices, comma separated
    #[arg(long)]
    components: String,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    lo: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    hi: f64,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    /// Dataset index of the anchor sample
    #[arg(long, default_value_t = 0)]
    anchor: usize,
    #[arg(long, default_value = "traverse.pgm")]
    out: PathBuf,
}

#[derive(Args)]
struct CatTraverseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset indices of the anchor rows, comma separated
    #[arg(long, default_value = "0,1,2,3")]
    anchors: String,
    #[arg(long, default_value = "cat_traverse.pgm")]
    out: PathBuf,
}

#[derive(Args)]
struct EmDemoArgs {
    #[arg(long, default_value_t = 3)]
    components: usize,
    #[arg(long, default_value_t = 300)]
    points_per_cluster: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 40)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "mivae_em")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ToyMiArgs {
    /// independent | identity | noisy
    #[arg(long, default_value = "identity")]
    kind: String,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Parses args and runs; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Traverse(args) => cmd_traverse(args),
        Command::CatTraverse(args) => cmd_cat_traverse(args),
        Command::EmDemo(args) => cmd_em_demo(args),
        Command::ToyMi(args) => cmd_toy_mi(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let dataset = cfg.load_dataset()?;
    cfg.echo_resolved()?;
    let train_cfg = cfg.train_config()?;
    println!(
        "training on {} samples ({}x{}) for {} epochs",
        dataset.len(),
        dataset.rows(),
        dataset.cols(),
        train_cfg.epochs
    );
    let state = train(&dataset, &train_cfg)?;
    let last = state.history.last().expect("nonempty history");
    println!(
        "done: step {} recon {:.3} kl_gauss {:.3} kl_cat {:.3} mi {:.3} total {:.3}",
        last.step, last.recon, last.kl_gauss, last.kl_cat, last.mi_term, last.total
    );
    println!("artifacts in {}", cfg.run.out_dir.display());
    Ok(())
}

fn data_config(flags: &DataFlags, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.seed = seed;
    flags.apply(&mut cfg);
    cfg
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(w, "{row}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = ckpt.model;
    let cfg = data_config(&args.data, args.seed);
    let dataset = cfg.load_dataset()?;
    if dataset.dim() != model.data_dim() {
        return Err(Error::Dim {
            context: "eval dataset vs checkpoint",
            expected: model.data_dim(),
            got: dataset.dim(),
        });
    }
    let reports = args.out_dir.join("reports");
    std::fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;
    let mut summary = String::new();

    if model.layout.mi_target.is_some() {
        let budget = MiEvalBudget {
            q_train_steps: args.budget.max(1),
            seed: args.seed,
            ..Default::default()
        };
        let lower = mi_lower_bound(&model, &dataset, &budget)?;
        let (upper, upper_se) = kl_upper_bound(&model, &dataset)?;
        summary.push_str(&format!(
            "mi_lower_bound: {:.4} +- {:.4} (H const {:.4})\n",
            lower.value, lower.se, lower.h_const
        ));
        summary.push_str(&format!("kl_upper_bound: {upper:.4} +- {upper_se:.4}\n"));
        write_csv(
            &reports.join("mi_report.csv"),
            "quantity,value,se",
            &[
                format!("mi_lower_bound,{},{}", lower.value, lower.se),
                format!("kl_upper_bound,{upper},{upper_se}"),
            ],
        )?;
        let rows: Vec<String> = lower
            .q_training_curve
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{i},{v}"))
            .collect();
        write_csv(&reports.join("q_curve.csv"), "step,bound", &rows)?;
    } else {
        summary.push_str("mi bounds: skipped (model has no MI target)\n");
    }

    if model.layout.categorical_k > 0 {
        let bins = 20;
        let hist = categorical_prob_histogram(&model, &dataset, bins)?;
        let rows: Vec<String> = hist
            .iter()
            .enumerate()
            .map(|(b, c)| {
                format!(
                    "{},{},{}",
                    b as f64 / bins as f64,
                    (b + 1) as f64 / bins as f64,
                    c
                )
            })
            .collect();
        write_csv(&reports.join("prob_histogram.csv"), "bin_lo,bin_hi,count", &rows)?;

        if dataset.labels().is_some() {
            let counts = onehot_label_counts(&model, &dataset)?;
            let l = counts[0].len();
            let header = std::iter::once("category".to_string())
                .chain((0..l).map(|i| format!("label_{i}")))
                .collect::<Vec<_>>()
                .join(",");
            let rows: Vec<String> = counts
                .iter()
                .enumerate()
                .map(|(c, row)| {
                    std::iter::once(c.to_string())
                        .chain(row.iter().map(|v| v.to_string()))
                        .collect::<Vec<_>>()
                        .join(",")
                })
                .collect();
            write_csv(&reports.join("onehot_counts.csv"), &header, &rows)?;

            let split = (dataset.len() * 4) / 5;
            let (train_ds, test_ds) = dataset.split_at(split);
            let acc = categorical_accuracy(&model, &train_ds, &test_ds)?;
            summary.push_str(&format!("categorical_accuracy: {acc:.4}\n"));
        } else {
            summary.push_str("label diagnostics: skipped (no labels)\n");
        }
    }

    let path = reports.join("summary.txt");
    std::fs::write(&path, &summary).map_err(|e| Error::io(&path, e))?;
    print!("{summary}");
    Ok(())
}

// ── figures ─────────────────────────────────────────────────────────

/// Writes a binary PGM (P5, maxval 255); pixel values are clamped to [0, 1]
/// and scaled by 255 with rounding.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Dim {
            context: "write_pgm",
            expected: width * height,
            got: pixels.len(),
        });
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(
        pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Tiles a row-major grid of equally sized images into one image.
pub fn tile_grid(
    tiles: &[Vec<f64>],
    grid_rows: usize,
    grid_cols: usize,
    tile_h: usize,
    tile_w: usize,
) -> Result<(Vec<f64>, usize, usize)> {
    if tiles.len() != grid_rows * grid_cols {
        return Err(Error::Dim {
            context: "tile_grid count",
            expected: grid_rows * grid_cols,
            got: tiles.len(),
        });
    }
    let (out_w, out_h) = (grid_cols * tile_w, grid_rows * tile_h);
    let mut out = vec![0.0; out_w * out_h];
    for (t, tile) in tiles.iter().enumerate() {
        if tile.len() != tile_h * tile_w {
            return Err(Error::Dim {
                context: "tile_grid tile",
                expected: tile_h * tile_w,
                got: tile.len(),
            });
        }
        let (gr, gc) = (t / grid_cols, t % grid_cols);
        for y in 0..tile_h {
            let dst = (gr * tile_h + y) * out_w + gc * tile_w;
            out[dst..dst + tile_w].copy_from_slice(&tile[y * tile_w..(y + 1) * tile_w]);
        }
    }
    Ok((out, out_w, out_h))
}

fn anchor_code(model: &VaeModel, dataset: &Dataset, anchor: usize) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if anchor >= dataset.len() {
        return Err(Error::config(format!(
            "anchor index {anchor} out of range for {} samples",
            dataset.len()
        )));
    }
    let post = &model.encode(&dataset.batch(&[anchor]), 1.0)?[0];
    let z = post.gauss.mu.clone();
    let c = post.cat.as_ref().map(|cat| {
        let probs = cat.probs();
        let arg = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let mut onehot = vec![0.0; probs.len()];
        onehot[arg] = 1.0;
        onehot
    });
    Ok((z, c))
}

fn sweep_values(lo: f64, hi: f64, steps: usize, anchor_value: f64) -> Vec<f64> {
    if steps == 1 {
        // a single step decodes the anchor unchanged
        return vec![anchor_value];
    }
    (0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect()
}

fn cmd_traverse(args: TraverseArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = ckpt.model;
    let cfg = data_config(&args.data, args.seed);
    let dataset = cfg.load_dataset()?;
    if dataset.dim() != model.data_dim() {
        return Err(Error::Dim {
            context: "traverse dataset vs checkpoint",
            expected: model.data_dim(),
            got: dataset.dim(),
        });
    }
    let comps = parse_dims(&args.components)?;
    if comps.is_empty() || comps.len() > 2 {
        return Err(Error::config("traverse needs 1 or 2 component indices"));
    }
    for &c in &comps {
        if c >= model.layout.gaussian_dim {
            return Err(Error::config(format!(
                "component {c} out of range for {} Gaussian dims",
                model.layout.gaussian_dim
            )));
        }
    }
    if args.steps == 0 {
        return Err(Error::config("steps must be >= 1"));
    }

    let (z0, c0) = anchor_code(&model, &dataset, args.anchor)?;
    let rows_vals = sweep_values(args.lo, args.hi, args.steps, z0[comps[0]]);
    let cols_vals = if comps.len() == 2 {
        sweep_values(args.lo, args.hi, args.steps, z0[comps[1]])
    } else {
        vec![f64::NAN] // single row, second component untouched
    };

    let mut tiles = Vec::with_capacity(rows_vals.len() * cols_vals.len());
    for &rv in &rows_vals {
        for &cv in &cols_vals {
            let mut z = z0.clone();
            z[comps[0]] = rv;
            if comps.len() == 2 {
                z[comps[1]] = cv;
            }
            tiles.push(model.decode(&z, c0.as_deref())?);
        }
    }
    let (grid_rows, grid_cols) = if comps.len() == 2 {
        (rows_vals.len(), cols_vals.len())
    } else {
        (1, rows_vals.len())
    };
    // for the single-component case the sweep runs along the row
    let tiles = if comps.len() == 1 {
        tiles // already 1 × steps in row-major order
    } else {
        tiles
    };
    let (pixels, w, h) = tile_grid(&tiles, grid_rows, grid_cols, dataset.rows(), dataset.cols())?;
    write_pgm(&args.out, w, h, &pixels)?;
    println!("wrote {} ({}x{})", args.out.display(), w, h);
    Ok(())
}

fn cmd_cat_traverse(args: CatTraverseArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let model = ckpt.model;
    let k = model.layout.categorical_k;
    if k == 0 {
        return Err(Error::config("checkpoint model has no categorical latent"));
    }
    let cfg = data_config(&args.data, args.seed);
    let dataset = cfg.load_dataset()?;
    if dataset.dim() != model.data_dim() {
        return Err(Error::Dim {
            context: "cat-traverse dataset vs checkpoint",
            expected: model.data_dim(),
            got: dataset.dim(),
        });
    }
    let anchors = parse_dims(&args.anchors)?;
    if anchors.is_empty() {
        return Err(Error::config("need at least one anchor"));
    }

    let separator = vec![0.5; dataset.dim()];
    let mut tiles = Vec::with_capacity(anchors.len() * (k + 2));
    for &a in &anchors {
        let (z, _) = anchor_code(&model, &dataset, a)?;
        tiles.push(dataset.image(a).to_vec());
        tiles.push(separator.clone());
        for cat in 0..k {
            let mut onehot = vec![0.0; k];
            onehot[cat] = 1.0;
            tiles.push(model.decode(&z, Some(&onehot))?);
        }
    }
    let (pixels, w, h) = tile_grid(
        &tiles,
        anchors.len(),
        k + 2,
        dataset.rows(),
        dataset.cols(),
    )?;
    write_pgm(&args.out, w, h, &pixels)?;
    println!("wrote {} ({}x{})", args.out.display(), w, h);
    Ok(())
}

fn cmd_em_demo(args: EmDemoArgs) -> Result<()> {
    if args.components == 0 {
        return Err(Error::config("need at least one component"));
    }
    // true centers on a circle, radius comfortably above sigma
    let radius = 8.0f64.max(6.0 * args.sigma);
    let centers: Vec<(f64, f64)> = (0..args.components)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / args.components as f64;
            (radius * angle.cos(), radius * angle.sin())
        })
        .collect();
    let data = gaussian_blobs_2d(&centers, args.points_per_cluster, args.sigma, args.seed);
    let (params, trace) = crate::em_gmm::em_fit(&data, args.components, args.iters, args.seed)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let rows: Vec<String> = (0..params.k())
        .map(|j| {
            format!(
                "{j},{},{},{},{},{}",
                params.weights[j],
                params.means[j][0],
                params.means[j][1],
                params.variances[j][0],
                params.variances[j][1]
            )
        })
        .collect();
    write_csv(
        &args.out_dir.join("gmm_params.csv"),
        "component,weight,mean_x,mean_y,var_x,var_y",
        &rows,
    )?;
    let rows: Vec<String> = trace
        .iter()
        .enumerate()
        .map(|(i, ll)| format!("{i},{ll}"))
        .collect();
    write_csv(&args.out_dir.join("gmm_trace.csv"), "iteration,mean_loglik", &rows)?;
    println!(
        "fit {} components in {} iterations; mean loglik {:.4} -> {:.4}",
        params.k(),
        trace.len() - 1,
        trace.first().unwrap(),
        trace.last().unwrap()
    );
    Ok(())
}

fn cmd_toy_mi(args: ToyMiArgs) -> Result<()> {
    let kind = match args.kind.as_str() {
        "independent" => ToyJointKind::Independent,
        "identity" => ToyJointKind::Identity { k: args.k },
        "noisy" => ToyJointKind::NoisyChannel {
            k: args.k,
            eps: args.eps,
        },
        other => {
            return Err(Error::config(format!(
                "unknown toy kind '{other}' (expected independent|identity|noisy)"
            )))
        }
    };
    let joint = make_toy_joint(kind, args.seed)?;
    let toy = ToyVae::new(joint);
    let exact = brute_force_mi(&toy.joint);
    let upper = toy.kl_upper_bound_exact();

    let q_exact = toy.exact_posterior_q();
    let tight = toy.mi_lower_bound_exact(&q_exact)?;

    let mut noise = crate::dist::NoiseSource::new(args.seed).derive(0x70);
    let q_fit = toy.fit_q_from_samples(args.samples, &mut noise);
    let (mc, se) = toy.mi_lower_bound_mc(&q_fit, args.samples, &mut noise)?;

    println!("brute_force_mi      {exact:.6}");
    println!("lower (exact Q)     {tight:.6}");
    println!("lower (fitted Q MC) {mc:.6} +- {se:.6}");
    println!("kl_upper_bound      {upper:.6}");

    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(
            &dir.join("toy_mi.csv"),
            "quantity,value,se",
            &[
                format!("brute_force_mi,{exact},0"),
                format!("lower_exact_q,{tight},0"),
                format!("lower_fitted_q_mc,{mc},{se}"),
                format!("kl_upper_bound,{upper},0"),
            ],
        )?;
    }
    Ok(())
}
