//! `lcov analyze`: windowed correlation of a filter pair's responses on an
//! image, against its two controls (spectrally matched noise, and the same
//! image seen through phase-randomized filters).

use std::path::PathBuf;

use clap::Args;
use lcov_core::analysis::{
    self, ANALYSIS_BINS, ANALYSIS_STRIDE, ANALYSIS_WINDOW_SIGMA, ANALYSIS_WINDOW_SIZE,
};
use lcov_core::error::{Error, Result};
use lcov_core::io::{self, Preprocess};
use lcov_core::signal::gaussian_window;

use crate::settings::{self, kv, Settings};
use crate::Common;

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Input image (.pgm, or raw .iml by extension).
    #[arg(long)]
    image: PathBuf,

    /// Two-filter bank file; omitted, an oriented derivative pair is built.
    #[arg(long)]
    bank: Option<PathBuf>,

    /// Kernel size of the built-in pair (ignored with --bank).
    #[arg(long)]
    kernel_size: Option<usize>,

    /// Orientation of the built-in pair in degrees (ignored with --bank).
    #[arg(long)]
    theta: Option<f64>,

    /// Correlation window side length.
    #[arg(long)]
    window_size: Option<usize>,

    /// Correlation window Gaussian width.
    #[arg(long)]
    window_sigma: Option<f64>,

    /// Window grid stride.
    #[arg(long)]
    analysis_stride: Option<usize>,

    /// Histogram bin count over [0, 1].
    #[arg(long)]
    bins: Option<usize>,

    /// Pixel transform applied after decoding.
    #[arg(long)]
    preprocess: Option<Preprocess>,

    /// Directory receiving natural.csv, matched_noise.csv,
    /// scrambled_filters.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

fn median_text(m: Option<f64>) -> String {
    match m {
        Some(v) => v.to_string(),
        None => "nan".into(),
    }
}

pub fn run(common: &Common, args: AnalyzeArgs) -> Result<()> {
    let mut cfg = Settings::load(common.config.as_deref())?;
    let run = settings::resolve_common(common, &mut cfg)?;

    let kernel_size = args
        .kernel_size
        .or(cfg.take("kernel-size")?)
        .unwrap_or(ANALYSIS_WINDOW_SIZE);
    let theta = args.theta.or(cfg.take("theta")?).unwrap_or(0.0);
    let window_size = args
        .window_size
        .or(cfg.take("window-size")?)
        .unwrap_or(ANALYSIS_WINDOW_SIZE);
    let window_sigma = args
        .window_sigma
        .or(cfg.take("window-sigma")?)
        .unwrap_or(ANALYSIS_WINDOW_SIGMA);
    let stride = args
        .analysis_stride
        .or(cfg.take("analysis-stride")?)
        .unwrap_or(ANALYSIS_STRIDE);
    let bins = args.bins.or(cfg.take("bins")?).unwrap_or(ANALYSIS_BINS);
    let preprocess = match args.preprocess {
        Some(p) => {
            cfg.take::<Preprocess>("preprocess")?;
            p
        }
        None => cfg.take("preprocess")?.unwrap_or(Preprocess::None),
    };
    cfg.finish()?;

    let pair = match &args.bank {
        Some(path) => {
            let bank = io::load_bank(path)?;
            if bank.num_filters() != 2 {
                return Err(Error::InvalidInput(format!(
                    "analysis needs a 2-filter bank, {} has {}",
                    path.display(),
                    bank.num_filters()
                )));
            }
            bank
        }
        None => analysis::default_oriented_pair(kernel_size, theta.to_radians())?,
    };

    let mut echo = vec![
        kv("image", args.image.display()),
        kv("window-size", window_size),
        kv("window-sigma", window_sigma),
        kv("analysis-stride", stride),
        kv("bins", bins),
        kv("preprocess", preprocess.name()),
        kv("out-dir", args.out_dir.display()),
    ];
    match &args.bank {
        Some(path) => echo.push(kv("bank", path.display())),
        None => {
            echo.push(kv("kernel-size", kernel_size));
            echo.push(kv("theta", theta));
        }
    }
    settings::print_config(&run, &echo);

    let img = io::load_image(&args.image, preprocess)?;
    let window = gaussian_window(window_size, window_sigma)?;
    let suite = analysis::run_control_suite_with(&img, &pair, run.seed, &window, stride, bins)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let outputs = [
        ("natural.csv", &suite.natural_hist),
        ("matched_noise.csv", &suite.matched_noise_hist),
        ("scrambled_filters.csv", &suite.scrambled_filters_hist),
    ];
    for (name, hist) in outputs {
        io::write_file(&args.out_dir.join(name), io::histogram_csv(hist))?;
    }

    settings::print_summary(&[
        kv("natural_median", median_text(suite.natural.median())),
        kv(
            "matched_noise_median",
            median_text(suite.matched_noise.median()),
        ),
        kv(
            "scrambled_filters_median",
            median_text(suite.scrambled_filters.median()),
        ),
        kv("natural_degenerate", suite.natural.num_degenerate()),
        kv(
            "matched_noise_degenerate",
            suite.matched_noise.num_degenerate(),
        ),
        kv(
            "scrambled_filters_degenerate",
            suite.scrambled_filters.num_degenerate(),
        ),
        kv(
            "windows",
            suite.natural.num_valid() + suite.natural.num_degenerate(),
        ),
    ]);
    Ok(())
}
