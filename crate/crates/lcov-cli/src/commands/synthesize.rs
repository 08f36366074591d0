//! `lcov synthesize`: gradient-descend an image until its covariance map
//! matches a stored target.
//!
//! Covariance maps are blind to global sign (the map of `-x` equals the map
//! of `x`), so when a reference is supplied the reported error is the better
//! of the two signings.

use std::path::PathBuf;

use clap::Args;
use lcov_core::error::Result;
use lcov_core::io::{self, Preprocess};
use lcov_core::synthesis::{self, SynthConfig};

use crate::settings::{self, kv, Settings};
use crate::Common;

#[derive(Args)]
pub struct SynthesizeArgs {
    /// Target covariance map.
    #[arg(long)]
    target: PathBuf,

    /// Bank the map was measured under.
    #[arg(long)]
    bank: PathBuf,

    /// Gradient step budget.
    #[arg(long)]
    steps: Option<usize>,

    /// Initial step size of the harmonic schedule.
    #[arg(long)]
    eta0: Option<f64>,

    /// Stop once the objective falls to this value.
    #[arg(long)]
    tolerance: Option<f64>,

    /// Objective trace cadence in steps.
    #[arg(long)]
    log_every: Option<usize>,

    /// Start from this image instead of seeded white noise.
    #[arg(long)]
    init: Option<PathBuf>,

    /// Ground-truth image for relative error reporting.
    #[arg(long)]
    reference: Option<PathBuf>,

    /// Pixel transform applied to --init and --reference after decoding.
    #[arg(long)]
    preprocess: Option<Preprocess>,

    /// Where to write the synthesized image (16-bit PGM plus .range
    /// sidecar).
    #[arg(long)]
    out: PathBuf,

    /// Optional objective trace CSV.
    #[arg(long)]
    trace_csv: Option<PathBuf>,
}

pub fn run(common: &Common, args: SynthesizeArgs) -> Result<()> {
    let mut cfg = Settings::load(common.config.as_deref())?;
    let run = settings::resolve_common(common, &mut cfg)?;
    let defaults = SynthConfig::default();

    let config = SynthConfig {
        max_steps: args.steps.or(cfg.take("steps")?).unwrap_or(defaults.max_steps),
        eta0: args.eta0.or(cfg.take("eta0")?).unwrap_or(defaults.eta0),
        seed: run.seed,
        tolerance: args
            .tolerance
            .or(cfg.take("tolerance")?)
            .unwrap_or(defaults.tolerance),
        log_every: args
            .log_every
            .or(cfg.take("log-every")?)
            .unwrap_or(defaults.log_every),
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
        kv("target", args.target.display()),
        kv("bank", args.bank.display()),
        kv("steps", config.max_steps),
        kv("eta0", config.eta0),
        kv("tolerance", config.tolerance),
        kv("log-every", config.log_every),
        kv("preprocess", preprocess.name()),
        kv("out", args.out.display()),
    ];
    if let Some(p) = &args.init {
        echo.push(kv("init", p.display()));
    }
    if let Some(p) = &args.reference {
        echo.push(kv("reference", p.display()));
    }
    if let Some(p) = &args.trace_csv {
        echo.push(kv("trace-csv", p.display()));
    }
    settings::print_config(&run, &echo);

    let target = io::load_covmap(&args.target)?;
    let bank = io::load_bank(&args.bank)?;
    let reference = match &args.reference {
        Some(p) => Some(io::load_image(p, preprocess)?),
        None => None,
    };

    let result = match &args.init {
        Some(p) => {
            let init = io::load_image(p, preprocess)?;
            synthesis::synthesize_from(init, &target, &bank, &config, reference.as_ref())?
        }
        None => synthesis::synthesize(&target, &bank, &config, reference.as_ref())?,
    };

    io::save_image_rescaled(&args.out, &result.image)?;
    if let Some(path) = &args.trace_csv {
        io::write_file(path, io::trace_csv(&result.trace, config.eta0))?;
    }

    let mut summary = vec![kv("steps", result.steps)];
    if let Some(&(_, objective)) = result.trace.last() {
        summary.push(kv("objective", objective));
    }
    if let Some(reference) = &reference {
        let direct = synthesis::relative_error(&result.image, reference)?;
        let flipped = synthesis::relative_error(&result.image.scale(-1.0), reference)?;
        summary.push(kv("relative_error", direct.min(flipped)));
    }
    settings::print_summary(&summary);
    Ok(())
}
