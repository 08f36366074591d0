//! `lcov train`: learn a filter bank from an image ensemble by stochastic
//! gradient descent on the three-term dimensionality objective.

use std::path::PathBuf;

use clap::Args;
use lcov_core::error::Result;
use lcov_core::io::{self, Preprocess};
use lcov_core::trainer::{self, ImageEnsemble, TrainConfig};

use crate::settings::{self, kv, Settings};
use crate::Common;

#[derive(Args)]
pub struct TrainArgs {
    /// Ensemble images (.pgm or .iml), at least one.
    #[arg(long, required = true, num_args = 1..)]
    images: Vec<PathBuf>,

    #[arg(long)]
    num_filters: Option<usize>,

    #[arg(long)]
    kernel_size: Option<usize>,

    #[arg(long)]
    patch_size: Option<usize>,

    #[arg(long)]
    patch_stride: Option<usize>,

    #[arg(long)]
    window_sigma: Option<f64>,

    #[arg(long)]
    blur_sigma: Option<f64>,

    #[arg(long)]
    lambda: Option<f64>,

    #[arg(long)]
    mu: Option<f64>,

    /// Fixed step size; omitted, a stability probe chooses one.
    #[arg(long)]
    learning_rate: Option<f64>,

    /// Gradient steps to run.
    #[arg(long)]
    steps: Option<usize>,

    /// Training crop side length.
    #[arg(long)]
    crop_size: Option<usize>,

    /// Disable Fourier-domain gradient scaling.
    #[arg(long)]
    no_gradient_scaling: bool,

    /// Record a bank snapshot every N steps (0 = never); snapshots are
    /// written next to the output bank as <out-bank>.step<N>.
    #[arg(long)]
    checkpoint_every: Option<usize>,

    /// Pixel transform applied to each image after decoding.
    #[arg(long)]
    preprocess: Option<Preprocess>,

    /// Where to write the learned bank.
    #[arg(long)]
    out_bank: PathBuf,

    /// Optional per-step energy log.
    #[arg(long)]
    log_csv: Option<PathBuf>,
}

pub fn run(common: &Common, args: TrainArgs) -> Result<()> {
    let mut cfg = Settings::load(common.config.as_deref())?;
    let run = settings::resolve_common(common, &mut cfg)?;
    let defaults = TrainConfig::default();

    let config = TrainConfig {
        num_filters: args
            .num_filters
            .or(cfg.take("num-filters")?)
            .unwrap_or(defaults.num_filters),
        kernel_size: args
            .kernel_size
            .or(cfg.take("kernel-size")?)
            .unwrap_or(defaults.kernel_size),
        patch_size: args
            .patch_size
            .or(cfg.take("patch-size")?)
            .unwrap_or(defaults.patch_size),
        patch_stride: args
            .patch_stride
            .or(cfg.take("patch-stride")?)
            .unwrap_or(defaults.patch_stride),
        window_sigma: args
            .window_sigma
            .or(cfg.take("window-sigma")?)
            .unwrap_or(defaults.window_sigma),
        blur_sigma: args
            .blur_sigma
            .or(cfg.take("blur-sigma")?)
            .unwrap_or(defaults.blur_sigma),
        lambda: args.lambda.or(cfg.take("lambda")?).unwrap_or(defaults.lambda),
        mu: args.mu.or(cfg.take("mu")?).unwrap_or(defaults.mu),
        learning_rate: args.learning_rate.or(cfg.take("learning-rate")?),
        num_steps: args.steps.or(cfg.take("steps")?).unwrap_or(defaults.num_steps),
        crop_size: args
            .crop_size
            .or(cfg.take("crop-size")?)
            .unwrap_or(defaults.crop_size),
        seed: run.seed,
        gradient_scaling: if args.no_gradient_scaling {
            cfg.take::<bool>("gradient-scaling")?;
            false
        } else {
            cfg.take("gradient-scaling")?.unwrap_or(true)
        },
        deterministic: run.deterministic,
        checkpoint_every: args
            .checkpoint_every
            .or(cfg.take("checkpoint-every")?)
            .unwrap_or(0),
    };
    let preprocess = match args.preprocess {
        Some(p) => {
            cfg.take::<Preprocess>("preprocess")?;
            p
        }
        None => cfg.take("preprocess")?.unwrap_or(Preprocess::None),
    };
    cfg.finish()?;

    let mut echo = vec![
        kv("num-filters", config.num_filters),
        kv("kernel-size", config.kernel_size),
        kv("patch-size", config.patch_size),
        kv("patch-stride", config.patch_stride),
        kv("window-sigma", config.window_sigma),
        kv("blur-sigma", config.blur_sigma),
        kv("lambda", config.lambda),
        kv("mu", config.mu),
        kv("steps", config.num_steps),
        kv("crop-size", config.crop_size),
        kv("gradient-scaling", config.gradient_scaling),
        kv("checkpoint-every", config.checkpoint_every),
        kv("preprocess", preprocess.name()),
        kv("out-bank", args.out_bank.display()),
    ];
    match config.learning_rate {
        Some(lr) => echo.push(kv("learning-rate", lr)),
        None => echo.push(kv("learning-rate", "auto")),
    }
    let image_list: Vec<String> = args.images.iter().map(|p| p.display().to_string()).collect();
    echo.push(kv("images", image_list.join(",")));
    if let Some(p) = &args.log_csv {
        echo.push(kv("log-csv", p.display()));
    }
    settings::print_config(&run, &echo);

    let mut images = Vec::with_capacity(args.images.len());
    for path in &args.images {
        images.push(io::load_image(path, preprocess)?);
    }
    let ensemble = ImageEnsemble::new(images)?;

    let (bank, log) = trainer::train(&ensemble, &config)?;

    io::save_bank(&args.out_bank, &bank)?;
    for (step, snapshot) in &log.checkpoints {
        let mut name = args.out_bank.as_os_str().to_os_string();
        name.push(format!(".step{step}"));
        io::save_bank(&PathBuf::from(name), snapshot)?;
    }
    if let Some(path) = &args.log_csv {
        io::write_file(path, io::train_log_csv(&log))?;
    }

    let mut summary = vec![
        kv("steps", config.num_steps),
        kv("learning_rate", log.learning_rate),
        kv("filters", config.num_filters),
    ];
    if let Some(last) = log.records.last() {
        summary.push(kv("final_total", last.energy.total));
        summary.push(kv("final_local_dim", last.energy.local_dim));
        summary.push(kv("final_recons", last.energy.recons));
        summary.push(kv("final_global_dim", last.energy.global_dim));
    }
    settings::print_summary(&summary);
    Ok(())
}
