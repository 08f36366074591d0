//! `lcov covmap-edit`: eigenvalue manipulations of a stored covariance map.

use std::path::PathBuf;

use clap::Args;
use lcov_core::covmap::{self, AdaptiveExclusion, CovarianceMap};
use lcov_core::error::{Error, Result};
use lcov_core::io;

use crate::settings::{self, kv, Settings};
use crate::Common;

#[derive(Args)]
pub struct CovmapEditArgs {
    /// Covariance map to edit.
    #[arg(long, value_name = "PATH")]
    r#in: PathBuf,

    /// One of threshold-fixed, threshold-adaptive, power,
    /// restrict-variances.
    #[arg(long)]
    op: String,

    /// Eigenvalue cutoff for threshold-fixed.
    #[arg(long)]
    tau: Option<f64>,

    /// Per-location cutoff for threshold-adaptive, as a fraction of the
    /// largest non-protected eigenvalue.
    #[arg(long)]
    fraction: Option<f64>,

    /// Exponent for power.
    #[arg(long)]
    exponent: Option<f64>,

    /// Protected eigenvalue for threshold-adaptive: largest, or
    /// lowpass:<channel>.
    #[arg(long)]
    exclude: Option<String>,

    /// Where to write the edited map.
    #[arg(long)]
    out: PathBuf,
}

fn parse_exclusion(text: &str) -> Result<AdaptiveExclusion> {
    if text == "largest" {
        return Ok(AdaptiveExclusion::Largest);
    }
    if let Some(ch) = text.strip_prefix("lowpass:") {
        let ch = ch.parse().map_err(|_| {
            Error::Config(format!("lowpass channel must be an integer, got '{ch}'"))
        })?;
        return Ok(AdaptiveExclusion::LowPassChannel(ch));
    }
    Err(Error::Config(format!(
        "unknown exclusion '{text}' (expected largest or lowpass:<channel>)"
    )))
}

fn mean_participation_ratio(map: &CovarianceMap) -> f64 {
    let mats = map.matrices();
    let sum: f64 = mats.iter().map(covmap::participation_ratio).sum();
    sum / mats.len() as f64
}

/// A parameter an op does not use must not be passed: silently ignoring it
/// would hide a misunderstanding of what the edit did.
fn reject_unused(op: &str, unused: &[(&str, bool)]) -> Result<()> {
    for (name, present) in unused {
        if *present {
            return Err(Error::Config(format!("--{name} does not apply to op '{op}'")));
        }
    }
    Ok(())
}

pub fn run(common: &Common, args: CovmapEditArgs) -> Result<()> {
    let mut cfg = Settings::load(common.config.as_deref())?;
    let run = settings::resolve_common(common, &mut cfg)?;

    let op = args.op.clone();
    let tau = args.tau.or(cfg.take("tau")?);
    let fraction = args.fraction.or(cfg.take("fraction")?);
    let exponent = args.exponent.or(cfg.take("exponent")?);
    let exclude = match args.exclude.clone() {
        Some(e) => {
            cfg.take::<String>("exclude")?;
            Some(e)
        }
        None => cfg.take("exclude")?,
    };
    cfg.finish()?;

    let mut echo = vec![
        kv("in", args.r#in.display()),
        kv("op", &op),
        kv("out", args.out.display()),
    ];
    if let Some(t) = tau {
        echo.push(kv("tau", t));
    }
    if let Some(f) = fraction {
        echo.push(kv("fraction", f));
    }
    if let Some(p) = exponent {
        echo.push(kv("exponent", p));
    }
    if let Some(e) = &exclude {
        echo.push(kv("exclude", e));
    }
    settings::print_config(&run, &echo);

    let map = io::load_covmap(&args.r#in)?;
    let edited = match op.as_str() {
        "threshold-fixed" => {
            reject_unused(
                &op,
                &[("fraction", fraction.is_some()), ("exponent", exponent.is_some()),
                  ("exclude", exclude.is_some())],
            )?;
            let tau = tau.ok_or_else(|| Error::Config("threshold-fixed needs --tau".into()))?;
            covmap::eig_threshold_fixed(&map, tau)?
        }
        "threshold-adaptive" => {
            reject_unused(
                &op,
                &[("tau", tau.is_some()), ("exponent", exponent.is_some())],
            )?;
            let fraction = fraction
                .ok_or_else(|| Error::Config("threshold-adaptive needs --fraction".into()))?;
            let exclusion = match &exclude {
                Some(e) => parse_exclusion(e)?,
                None => AdaptiveExclusion::Largest,
            };
            covmap::eig_threshold_adaptive_with(&map, fraction, exclusion)?
        }
        "power" => {
            reject_unused(
                &op,
                &[("tau", tau.is_some()), ("fraction", fraction.is_some()),
                  ("exclude", exclude.is_some())],
            )?;
            let p = exponent.ok_or_else(|| Error::Config("power needs --exponent".into()))?;
            covmap::eig_power(&map, p)?
        }
        "restrict-variances" => {
            reject_unused(
                &op,
                &[("tau", tau.is_some()), ("fraction", fraction.is_some()),
                  ("exponent", exponent.is_some()), ("exclude", exclude.is_some())],
            )?;
            covmap::restrict_to_variances(&map)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown op '{other}' (expected threshold-fixed, threshold-adaptive, power, \
                 or restrict-variances)"
            )))
        }
    };
    io::save_covmap(&args.out, &edited)?;

    settings::print_summary(&[
        kv("locations", edited.count_measurements().locations),
        kv("participation_before", mean_participation_ratio(&map)),
        kv("participation_after", mean_participation_ratio(&edited)),
    ]);
    Ok(())
}
