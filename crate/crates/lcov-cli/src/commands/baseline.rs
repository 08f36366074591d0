//! `lcov baseline`: corrupt a reference with white noise scaled to land at a
//! prescribed relative error, for calibrating synthesis error numbers.

use std::path::PathBuf;

use clap::Args;
use lcov_core::error::Result;
use lcov_core::io::{self, Preprocess};
use lcov_core::synthesis;

use crate::settings::{self, kv, Settings};
use crate::Common;

#[derive(Args)]
pub struct BaselineArgs {
    /// Reference image (.pgm or .iml).
    #[arg(long)]
    reference: PathBuf,

    /// Relative error the corrupted copy should have.
    #[arg(long)]
    target_error: Option<f64>,

    /// Pixel transform applied after decoding.
    #[arg(long)]
    preprocess: Option<Preprocess>,

    /// Where to write the corrupted image.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(common: &Common, args: BaselineArgs) -> Result<()> {
    let mut cfg = Settings::load(common.config.as_deref())?;
    let run = settings::resolve_common(common, &mut cfg)?;

    let target_error = args
        .target_error
        .or(cfg.take("target-error")?)
        .unwrap_or(0.05);
    let preprocess = match args.preprocess {
        Some(p) => {
            cfg.take::<Preprocess>("preprocess")?;
            p
        }
        None => cfg.take("preprocess")?.unwrap_or(Preprocess::None),
    };
    cfg.finish()?;

    settings::print_config(
        &run,
        &[
            kv("reference", args.reference.display()),
            kv("target-error", target_error),
            kv("preprocess", preprocess.name()),
            kv("out", args.out.display()),
        ],
    );

    let reference = io::load_image(&args.reference, preprocess)?;
    let corrupted = synthesis::noise_baseline(&reference, target_error, run.seed)?;
    io::save_image_rescaled(&args.out, &corrupted)?;

    let achieved = synthesis::relative_error(&corrupted, &reference)?;
    settings::print_summary(&[kv("relative_error", achieved)]);
    Ok(())
}
