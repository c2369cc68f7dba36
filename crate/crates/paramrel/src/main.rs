//! Command-line surface: train, sample, reconstruct, interpolate,
//! traverse, probe, gradcheck, flow-heatmap.
//!
//! Exit codes: 0 on success, 1 on usage/config errors, 2 on runtime
//! failures.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use paramrel::bfn::Theta;
use paramrel::error::{Error, Result};
use paramrel::eval::{
    informativeness, latent_probe, make_synthetic, reconstruction_error, DatasetKind, ReconMetric,
};
use paramrel::io::checkpoint::{load_checkpoint, save_checkpoint};
use paramrel::io::config::RunConfig;
use paramrel::io::csv::write_csv;
use paramrel::io::idx::{image_dims, load_idx, IdxMode};
use paramrel::io::pgm::write_pgm_grid;
use paramrel::model::{DataSpec, ParamRelModel};
use paramrel::objective::{Sample, DEFAULT_TRAIN_N_MC};
use paramrel::pipeline::{
    export_flow_heatmap, generate, interpolate, reconstruct, run_training, InterpMode,
    TrainConfig, Trainer, Trajectory, ZMode,
};
use paramrel::rng;
use paramrel::schedule::{AccuracySchedule, ScheduleKind};
use paramrel::{bfn, nn, objective};

#[derive(Parser)]
#[command(
    name = "paramrel",
    about = "Parameter-space representation learning on Bayesian flow networks",
    version
)]
struct Cli {
    /// Master seed; overrides train.seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "runs/out")]
    out: PathBuf,

    /// Config override, repeatable: --set key=value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliInterpMode {
    Linear,
    Slerp,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliZMode {
    Prior,
    Encoder,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write config, metrics, and checkpoint to --out.
    Train,
    /// Generate samples from a trained run directory.
    Sample {
        /// Run directory produced by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Number of samples.
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Latent source at each step.
        #[arg(long, value_enum, default_value_t = CliZMode::Prior)]
        z_mode: CliZMode,
    },
    /// Reconstruct dataset samples through reverse-sampling.
    Reconstruct {
        #[arg(long)]
        run: PathBuf,
        /// Dataset index of the first sample to reconstruct.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// How many consecutive samples to reconstruct.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Interpolate between two dataset samples in noise space.
    Interpolate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0)]
        index_a: usize,
        #[arg(long, default_value_t = 1)]
        index_b: usize,
        #[arg(long, value_enum, default_value_t = CliInterpMode::Slerp)]
        mode: CliInterpMode,
        /// Number of interpolation points.
        #[arg(long, default_value_t = 7)]
        m: usize,
    },
    /// Sweep one latent coordinate and decode each point.
    Traverse {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Latent coordinate to vary.
        #[arg(long, default_value_t = 0)]
        dim: usize,
        #[arg(long, default_value_t = -3.0)]
        min: f64,
        #[arg(long, default_value_t = 3.0)]
        max: f64,
        #[arg(long, default_value_t = 7)]
        m: usize,
    },
    /// Cross-validated linear probe of the learned latents.
    Probe {
        #[arg(long)]
        run: PathBuf,
        /// Ground-truth factor index to probe (must be binary).
        #[arg(long, default_value_t = 0)]
        factor: usize,
        /// Probe step; defaults to the configured eval.t_probe.
        #[arg(long)]
        t_probe: Option<usize>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Finite-difference check of the full training loss gradient.
    Gradcheck,
    /// Export the flow-distribution log-density grid and trajectories.
    FlowHeatmap {
        /// Scalar observation.
        #[arg(long, default_value_t = 0.8)]
        x0: f64,
        #[arg(long, default_value_t = 200)]
        bins: usize,
        #[arg(long, default_value_t = 200)]
        trajectories: usize,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn parse_overrides(cli: &Cli) -> Result<Vec<(String, String)>> {
    let mut overrides = Vec::new();
    for entry in &cli.set {
        let Some((k, v)) = entry.split_once('=') else {
            return Err(Error::Usage(format!(
                "--set expects KEY=VALUE, got `{entry}`"
            )));
        };
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = cli.seed {
        overrides.push(("train.seed".to_string(), seed.to_string()));
    }
    Ok(overrides)
}

fn resolve_config(cli: &Cli, run: Option<&Path>) -> Result<RunConfig> {
    let overrides = parse_overrides(cli)?;
    let path = match (&cli.config, run) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(dir)) => {
            let p = dir.join("resolved.config");
            if !p.exists() {
                return Err(Error::Usage(format!(
                    "{} has no resolved.config; pass --config",
                    dir.display()
                )));
            }
            Some(p)
        }
        (None, None) => None,
    };
    RunConfig::parse(path.as_deref(), &overrides)
}

struct LoadedData {
    samples: Vec<Sample>,
    factors: Option<(Vec<Vec<usize>>, Vec<String>)>,
    dim: usize,
    classes: Option<usize>,
    width: usize,
    height: usize,
}

fn load_dataset(config: &RunConfig) -> Result<LoadedData> {
    let seed = config.get_u64("train.seed");
    match config.get("data.kind") {
        "idx" => {
            let path = PathBuf::from(config.get("data.path"));
            if path.as_os_str().is_empty() {
                return Err(Error::Config("data.kind = idx requires data.path".into()));
            }
            let labels_path = match config.get("data.labels_path") {
                "" => None,
                p => Some(PathBuf::from(p)),
            };
            let discrete = config.schedule()?.kind == ScheduleKind::Discrete;
            let mode = if discrete {
                IdxMode::Binary
            } else {
                IdxMode::Continuous
            };
            let (tensor, labels) = load_idx(&path, labels_path.as_deref(), mode)?;
            let (rows, cols) = image_dims(&path)?;
            let d = rows * cols;
            let n = tensor.shape()[0];
            let samples: Vec<Sample> = (0..n)
                .map(|i| {
                    let row = &tensor.data()[i * d..(i + 1) * d];
                    if discrete {
                        Sample::Discrete(row.iter().map(|&v| v as usize).collect())
                    } else {
                        Sample::Continuous(nn::Tensor::from_vec(row.to_vec()))
                    }
                })
                .collect();
            let factors = labels.map(|ls| {
                (
                    ls.iter().map(|&l| vec![l as usize]).collect::<Vec<_>>(),
                    vec!["label".to_string()],
                )
            });
            Ok(LoadedData {
                samples,
                factors,
                dim: d,
                classes: discrete.then_some(2),
                width: cols,
                height: rows,
            })
        }
        _ => {
            let kind = config.dataset_kind()?;
            let ds = make_synthetic(kind, config.get_usize("data.n"), seed)?;
            let samples: Vec<Sample> = (0..ds.len()).map(|i| ds.sample(i)).collect();
            let classes = match kind {
                DatasetKind::BlobsContinuous => None,
                DatasetKind::ShapesBinary => Some(2),
            };
            let dim = ds.dim();
            Ok(LoadedData {
                samples,
                factors: Some((ds.factors, ds.factor_names)),
                dim,
                classes,
                width: 8,
                height: 8,
            })
        }
    }
}

fn load_trained_model(config: &RunConfig, data: &LoadedData, run: &Path) -> Result<ParamRelModel> {
    let model_config = config.model_config(data.dim, data.classes)?;
    let store = load_checkpoint(&run.join("checkpoint.prlc"))?;
    ParamRelModel::from_store(model_config, store)
}

fn train_config_from(config: &RunConfig) -> Result<TrainConfig> {
    let tc = TrainConfig {
        epochs: config.get_usize("train.epochs"),
        batch_size: config.get_usize("train.batch_size"),
        seed: config.get_u64("train.seed"),
        lr: config.get_f64("train.lr"),
        max_steps: config.get_usize("train.max_steps"),
        n_mc: DEFAULT_TRAIN_N_MC,
        kernel: config.mmd_kernel()?,
        bandwidth: config.mmd_bandwidth(),
    };
    tc.validate()?;
    Ok(tc)
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sample_pixels(sample: &Sample, classes: Option<usize>) -> Vec<f64> {
    match sample {
        Sample::Continuous(t) => t.data().to_vec(),
        Sample::Discrete(cls) => {
            let k = classes.unwrap_or(2).max(2) as f64;
            cls.iter()
                .map(|&c| c as f64 / (k - 1.0) * 2.0 - 1.0)
                .collect()
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn trajectory_rows(trajectory: &Trajectory) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let first = match trajectory.records.first() {
        Some(r) => r,
        None => return rows,
    };
    let mut header = vec!["t".to_string()];
    match &first.theta {
        Theta::Continuous(p) => {
            header.push("rho".to_string());
            for d in 0..p.dim() {
                header.push(format!("mu_{d}"));
            }
        }
        Theta::Discrete(p) => {
            for d in 0..p.dim() {
                for k in 0..p.classes() {
                    header.push(format!("theta_{d}_{k}"));
                }
            }
        }
    }
    for l in 0..first.z.len() {
        header.push(format!("z_{l}"));
    }
    for d in 0..first.xhat.dim() {
        header.push(format!("xhat_{d}"));
    }
    rows.push(header);
    for rec in &trajectory.records {
        let mut row = vec![rec.t.to_string()];
        match &rec.theta {
            Theta::Continuous(p) => {
                row.push(fmt(p.rho));
                row.extend(p.mu.data().iter().map(|&v| fmt(v)));
            }
            Theta::Discrete(p) => {
                row.extend(p.theta().data().iter().map(|&v| fmt(v)));
            }
        }
        row.extend(rec.z.iter().map(|&v| fmt(v)));
        match &rec.xhat {
            Sample::Continuous(x) => row.extend(x.data().iter().map(|&v| fmt(v))),
            Sample::Discrete(cls) => row.extend(cls.iter().map(|c| c.to_string())),
        }
        rows.push(row);
    }
    rows
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train => cmd_train(&cli),
        Command::Sample { run, n, z_mode } => cmd_sample(&cli, run, *n, *z_mode),
        Command::Reconstruct { run, index, count } => cmd_reconstruct(&cli, run, *index, *count),
        Command::Interpolate {
            run,
            index_a,
            index_b,
            mode,
            m,
        } => cmd_interpolate(&cli, run, *index_a, *index_b, *mode, *m),
        Command::Traverse {
            run,
            index,
            dim,
            min,
            max,
            m,
        } => cmd_traverse(&cli, run, *index, *dim, *min, *max, *m),
        Command::Probe {
            run,
            factor,
            t_probe,
            folds,
        } => cmd_probe(&cli, run, *factor, *t_probe, *folds),
        Command::Gradcheck => cmd_gradcheck(&cli),
        Command::FlowHeatmap {
            x0,
            bins,
            trajectories,
        } => cmd_flow_heatmap(&cli, *x0, *bins, *trajectories),
    }
}

fn cmd_train(cli: &Cli) -> Result<()> {
    let config = resolve_config(cli, None)?;
    let data = load_dataset(&config)?;
    let seed = config.get_u64("train.seed");
    let tc = train_config_from(&config)?;
    let model_config = config.model_config(data.dim, data.classes)?;
    let mut init_rng = rng::derive(seed, 0x1217);
    let model = ParamRelModel::build(model_config, &mut init_rng)?;
    let sched = config.schedule()?;
    let weights = config.loss_weights()?;
    let mut trainer = Trainer::new(model, sched, weights, &tc);

    ensure_out_dir(&cli.out)?;
    config.write(&cli.out.join("resolved.config"))?;

    let metrics = run_training(&mut trainer, &data.samples, &tc)?;

    let mut rows = vec![vec![
        "step".to_string(),
        "flow_kl".to_string(),
        "latent_rate".to_string(),
        "mmd".to_string(),
        "distortion".to_string(),
        "total".to_string(),
    ]];
    for (step, m) in metrics.iter().enumerate() {
        rows.push(vec![
            step.to_string(),
            fmt(m.flow_kl),
            fmt(m.latent_rate),
            fmt(m.mmd),
            fmt(m.distortion_nll),
            fmt(m.total),
        ]);
    }
    write_csv(&rows, &cli.out.join("metrics.csv"))?;
    save_checkpoint(&trainer.model.store, &cli.out.join("checkpoint.prlc"))?;

    let first = metrics.first().map(|m| m.total).unwrap_or(f64::NAN);
    let last = metrics.last().map(|m| m.total).unwrap_or(f64::NAN);
    println!(
        "trained {} steps (first total {first:.4}, last total {last:.4}); outputs in {}",
        metrics.len(),
        cli.out.display()
    );
    Ok(())
}

fn cmd_sample(cli: &Cli, run: &Path, n: usize, z_mode: CliZMode) -> Result<()> {
    let config = resolve_config(cli, Some(run))?;
    let data = load_dataset(&config)?;
    let model = load_trained_model(&config, &data, run)?;
    let sched = config.schedule()?;
    let seed = config.get_u64("train.seed");
    let mut rng = rng::derive(seed, 0x5A3);
    let mode = match z_mode {
        CliZMode::Prior => ZMode::Prior,
        CliZMode::Encoder => ZMode::Encoder,
    };
    let outs = generate(&model, &sched, n, &mode, &mut rng)?;

    ensure_out_dir(&cli.out)?;
    let images: Vec<Vec<f64>> = outs
        .iter()
        .map(|(s, _)| sample_pixels(s, data.classes))
        .collect();
    write_pgm_grid(
        &images,
        data.width,
        data.height,
        8,
        &cli.out.join("samples.pgm"),
    )?;
    if let Some((_, trajectory)) = outs.first() {
        write_csv(&trajectory_rows(trajectory), &cli.out.join("trajectory.csv"))?;
    }
    println!("wrote {} samples to {}", outs.len(), cli.out.display());
    Ok(())
}

fn cmd_reconstruct(cli: &Cli, run: &Path, index: usize, count: usize) -> Result<()> {
    let config = resolve_config(cli, Some(run))?;
    let data = load_dataset(&config)?;
    let model = load_trained_model(&config, &data, run)?;
    let sched = config.schedule()?;
    let seed = config.get_u64("train.seed");
    if count == 0 || index + count > data.samples.len() {
        return Err(Error::Usage(format!(
            "indices {index}..{} exceed dataset size {}",
            index + count,
            data.samples.len()
        )));
    }
    let mut rng = rng::derive(seed, 0x43C0);
    let mut images = Vec::new();
    let mut scores = Vec::new();
    for i in index..index + count {
        let x0 = &data.samples[i];
        let xhat = reconstruct(&model, &sched, x0, &mut rng)?;
        let metric = match x0 {
            Sample::Continuous(_) => ReconMetric::Mse,
            Sample::Discrete(_) => ReconMetric::BitAccuracy,
        };
        scores.push(reconstruction_error(x0, &xhat, metric)?);
        images.push(sample_pixels(x0, data.classes));
        images.push(sample_pixels(&xhat, data.classes));
    }
    ensure_out_dir(&cli.out)?;
    write_pgm_grid(
        &images,
        data.width,
        data.height,
        2,
        &cli.out.join("reconstructions.pgm"),
    )?;
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let metric_name = match data.samples[index] {
        Sample::Continuous(_) => "mse",
        Sample::Discrete(_) => "bit_accuracy",
    };
    println!(
        "reconstructed {count} samples, mean {metric_name} {mean:.6}; outputs in {}",
        cli.out.display()
    );
    Ok(())
}

fn cmd_interpolate(
    cli: &Cli,
    run: &Path,
    index_a: usize,
    index_b: usize,
    mode: CliInterpMode,
    m: usize,
) -> Result<()> {
    let config = resolve_config(cli, Some(run))?;
    let data = load_dataset(&config)?;
    let model = load_trained_model(&config, &data, run)?;
    let sched = config.schedule()?;
    let seed = config.get_u64("train.seed");
    let get = |i: usize| -> Result<&Sample> {
        data.samples
            .get(i)
            .ok_or_else(|| Error::Usage(format!("index {i} exceeds dataset size")))
    };
    let xa = get(index_a)?;
    let xb = get(index_b)?;
    let imode = match mode {
        CliInterpMode::Linear => InterpMode::Linear,
        CliInterpMode::Slerp => InterpMode::Slerp,
    };
    let mut rng = rng::derive(seed, 0x1274);
    let points = interpolate(&model, &sched, xa, xb, imode, m, &ZMode::Prior, &mut rng)?;

    ensure_out_dir(&cli.out)?;
    let images: Vec<Vec<f64>> = points
        .iter()
        .map(|p| sample_pixels(&p.decoded, data.classes))
        .collect();
    write_pgm_grid(
        &images,
        data.width,
        data.height,
        points.len(),
        &cli.out.join("interpolation.pgm"),
    )?;
    let mut rows = vec![{
        let mut h = vec!["lambda".to_string()];
        for d in 0..points[0].latent.len() {
            h.push(format!("latent_{d}"));
        }
        h
    }];
    for p in &points {
        let mut row = vec![fmt(p.lambda)];
        row.extend(p.latent.data().iter().map(|&v| fmt(v)));
        rows.push(row);
    }
    write_csv(&rows, &cli.out.join("interpolation.csv"))?;
    println!("wrote {m} interpolants to {}", cli.out.display());
    Ok(())
}

fn cmd_traverse(
    cli: &Cli,
    run: &Path,
    index: usize,
    dim: usize,
    min: f64,
    max: f64,
    m: usize,
) -> Result<()> {
    let config = resolve_config(cli, Some(run))?;
    let data = load_dataset(&config)?;
    let model = load_trained_model(&config, &data, run)?;
    let sched = config.schedule()?;
    let seed = config.get_u64("train.seed");
    let x0 = data
        .samples
        .get(index)
        .ok_or_else(|| Error::Usage(format!("index {index} exceeds dataset size")))?;
    let mut rng = rng::derive(seed, 0x7247);
    let points = paramrel::pipeline::traverse(&model, &sched, x0, dim, min, max, m, &mut rng)?;

    ensure_out_dir(&cli.out)?;
    let images: Vec<Vec<f64>> = points
        .iter()
        .map(|p| sample_pixels(&p.decoded, data.classes))
        .collect();
    write_pgm_grid(
        &images,
        data.width,
        data.height,
        points.len(),
        &cli.out.join("traversal.pgm"),
    )?;
    println!(
        "traversed latent {dim} over [{min}, {max}] in {m} steps; outputs in {}",
        cli.out.display()
    );
    Ok(())
}

fn cmd_probe(
    cli: &Cli,
    run: &Path,
    factor: usize,
    t_probe: Option<usize>,
    folds: usize,
) -> Result<()> {
    let config = resolve_config(cli, Some(run))?;
    let data = load_dataset(&config)?;
    let model = load_trained_model(&config, &data, run)?;
    let sched = config.schedule()?;
    let seed = config.get_u64("train.seed");
    let t_probe = t_probe.unwrap_or_else(|| config.t_probe());

    let Some((factors, names)) = &data.factors else {
        return Err(Error::Usage(
            "dataset carries no ground-truth factors to probe".into(),
        ));
    };
    if factor >= names.len() {
        return Err(Error::Usage(format!(
            "factor {factor} out of range 0..{}",
            names.len()
        )));
    }

    let z = probe_latents(&model, &sched, &data.samples, t_probe, seed)?;
    let column: Vec<usize> = factors.iter().map(|row| row[factor]).collect();
    let max_val = *column.iter().max().unwrap();
    if max_val != 1 {
        return Err(Error::UndefinedMetric(format!(
            "factor `{}` is not binary; the probe expects two classes",
            names[factor]
        )));
    }
    let labels: Vec<u8> = column.iter().map(|&v| v as u8).collect();
    let (mean, std) = latent_probe(&z, &labels, folds, seed)?;

    let info = informativeness(&z, factors)?;
    ensure_out_dir(&cli.out)?;
    let hash = config.hash_hex();
    let mut rows = vec![vec![
        "metric".to_string(),
        "value".to_string(),
        "std".to_string(),
        "config_hash".to_string(),
    ]];
    rows.push(vec![
        format!("probe_auroc_{}", names[factor]),
        fmt(mean),
        fmt(std),
        hash.clone(),
    ]);
    for (i, score) in info.iter().enumerate() {
        if let Some(s) = score {
            rows.push(vec![
                format!("informativeness_{}", names[i]),
                fmt(*s),
                String::new(),
                hash.clone(),
            ]);
        }
    }
    write_csv(&rows, &cli.out.join("probe.csv"))?;
    println!(
        "probe on `{}` at t = {t_probe}: auroc {mean:.4} +/- {std:.4}",
        names[factor]
    );
    Ok(())
}

/// Encoder means at the probe step for every sample, flow states drawn
/// from a seed-derived stream.
fn probe_latents(
    model: &ParamRelModel,
    sched: &AccuracySchedule,
    samples: &[Sample],
    t_probe: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng::derive(seed, 0xBEE5);
    samples
        .iter()
        .map(|x0| {
            let theta = match (x0, &model.config.data) {
                (Sample::Continuous(x), DataSpec::Continuous { .. }) => {
                    Theta::Continuous(bfn::sample_flow_continuous(x, t_probe, sched, &mut rng)?)
                }
                (Sample::Discrete(cls), DataSpec::Discrete { classes, .. }) => Theta::Discrete(
                    bfn::sample_flow_discrete(cls, t_probe, sched, *classes, &mut rng)?,
                ),
                _ => return Err(Error::Usage("sample type mismatch".into())),
            };
            Ok(model.encode(&theta, t_probe)?.mean.into_data())
        })
        .collect()
}

fn cmd_gradcheck(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let mut worst: f64 = 0.0;
    for kind in [ScheduleKind::Continuous, ScheduleKind::Discrete] {
        let err = objective::full_objective_grad_check(kind, seed)?;
        println!("{kind} objective: max relative gradient error {err:.3e}");
        worst = worst.max(err);
    }
    println!("max relative gradient error over the full objective: {worst:.3e}");
    if worst < 1e-4 {
        Ok(())
    } else {
        Err(Error::NonFinite {
            term: "gradient check".to_string(),
            dump: format!("max relative error {worst:.3e} >= 1e-4"),
        })
    }
}

fn cmd_flow_heatmap(cli: &Cli, x0: f64, bins: usize, trajectories: usize) -> Result<()> {
    let config = resolve_config(cli, None)?;
    let sched = config.schedule()?;
    let seed = config.get_u64("train.seed");
    let mut rng = rng::derive(seed, 0xF10);
    let hm = export_flow_heatmap(x0, &sched, bins, trajectories, &mut rng)?;

    ensure_out_dir(&cli.out)?;
    let mut rows = vec![vec![
        "t".to_string(),
        "mu".to_string(),
        "log_density".to_string(),
    ]];
    for (t, mu, ld) in &hm.grid {
        rows.push(vec![t.to_string(), fmt(*mu), fmt(*ld)]);
    }
    write_csv(&rows, &cli.out.join("heatmap.csv"))?;

    let mut rows = vec![vec![
        "trajectory".to_string(),
        "t".to_string(),
        "mu".to_string(),
    ]];
    for (i, line) in hm.trajectories.iter().enumerate() {
        for (t, mu) in line {
            rows.push(vec![i.to_string(), t.to_string(), fmt(*mu)]);
        }
    }
    write_csv(&rows, &cli.out.join("trajectories.csv"))?;
    println!(
        "wrote heatmap ({} bins x {} columns) and {} trajectories to {}",
        bins,
        sched.steps + 1,
        trajectories,
        cli.out.display()
    );
    Ok(())
}
