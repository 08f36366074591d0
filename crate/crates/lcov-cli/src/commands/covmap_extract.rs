//! `lcov covmap-extract`: run a bank over an image and store the grid of
//! windowed response covariance matrices.

use std::path::PathBuf;

use clap::Args;
use lcov_core::covmap::{self, CovWindow};
use lcov_core::error::{Error, Result};
use lcov_core::filterbank;
use lcov_core::io::{self, Preprocess};

use crate::settings::{self, kv, Settings};
use crate::Common;

#[derive(Args)]
pub struct CovmapExtractArgs {
    /// Input image (.pgm or .iml).
    #[arg(long)]
    image: PathBuf,

    /// Filter bank to respond with.
    #[arg(long)]
    bank: PathBuf,

    /// Covariance window side length.
    #[arg(long)]
    neighborhood: Option<usize>,

    /// Covariance grid stride.
    #[arg(long)]
    cov_stride: Option<usize>,

    /// Window shape: gaussian or boxcar.
    #[arg(long)]
    cov_window: Option<String>,

    /// Gaussian window width (defaults to neighborhood / 4).
    #[arg(long)]
    cov_sigma: Option<f64>,

    /// Keep only the per-filter variances.
    #[arg(long)]
    diagonal_only: bool,

    /// Pixel transform applied after decoding.
    #[arg(long)]
    preprocess: Option<Preprocess>,

    /// Where to write the covariance map.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(common: &Common, args: CovmapExtractArgs) -> Result<()> {
    let mut cfg = Settings::load(common.config.as_deref())?;
    let run = settings::resolve_common(common, &mut cfg)?;

    let neighborhood = args
        .neighborhood
        .or(cfg.take("neighborhood")?)
        .unwrap_or(16);
    let stride = args.cov_stride.or(cfg.take("cov-stride")?).unwrap_or(4);
    let window_name = match args.cov_window {
        Some(w) => {
            cfg.take::<String>("cov-window")?;
            w
        }
        None => cfg
            .take("cov-window")?
            .unwrap_or_else(|| "gaussian".to_string()),
    };
    let sigma = args
        .cov_sigma
        .or(cfg.take("cov-sigma")?)
        .unwrap_or(neighborhood as f64 / 4.0);
    let diagonal_only =
        args.diagonal_only || cfg.take::<bool>("diagonal-only")?.unwrap_or(false);
    let preprocess = match args.preprocess {
        Some(p) => {
            cfg.take::<Preprocess>("preprocess")?;
            p
        }
        None => cfg.take("preprocess")?.unwrap_or(Preprocess::None),
    };
    cfg.finish()?;

    let window = match window_name.as_str() {
        "gaussian" => CovWindow::Gaussian { sigma },
        "boxcar" => CovWindow::Boxcar,
        other => {
            return Err(Error::Config(format!(
                "unknown window '{other}' (expected gaussian or boxcar)"
            )))
        }
    };

    let mut echo = vec![
        kv("image", args.image.display()),
        kv("bank", args.bank.display()),
        kv("neighborhood", neighborhood),
        kv("cov-stride", stride),
        kv("cov-window", &window_name),
        kv("diagonal-only", diagonal_only),
        kv("preprocess", preprocess.name()),
        kv("out", args.out.display()),
    ];
    if matches!(window, CovWindow::Gaussian { .. }) {
        echo.push(kv("cov-sigma", sigma));
    }
    settings::print_config(&run, &echo);

    let img = io::load_image(&args.image, preprocess)?;
    let bank = io::load_bank(&args.bank)?;
    let responses = filterbank::apply(&bank, &img)?;
    let mut map = covmap::extract_standard(&responses, neighborhood, stride, window)?;
    if diagonal_only {
        map = covmap::restrict_to_variances(&map);
    }
    io::save_covmap(&args.out, &map)?;

    let count = map.count_measurements();
    settings::print_summary(&[
        kv("grid", format!("{}x{}", map.grid_height(), map.grid_width())),
        kv("locations", count.locations),
        kv("entries_per_matrix", count.entries_per_matrix),
        kv("measurements", count.total),
    ]);
    Ok(())
}
