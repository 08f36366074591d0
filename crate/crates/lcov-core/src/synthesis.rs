//! Synthesis by subgradient descent: match a target covariance map under the
//! entrywise L1 objective `E(x) = ‖Vec(φ(x) − φ(x_target))‖₁` with a
//! harmonically decaying step, plus fidelity metrics and the additive-noise
//! baseline used for comparisons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::covmap::{extract_standard, CovarianceMap};
use crate::error::{Error, Result};
use crate::filterbank::{apply, reconstruct, FilterBank, ResponseMap};
use crate::signal::Image;

/// Descent parameters for [`synthesize`].
#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Maximum number of gradient steps.
    pub max_steps: usize,
    /// Initial step size; step k uses `eta0 / k`.
    pub eta0: f64,
    /// Seed for the white-noise initialization.
    pub seed: u64,
    /// Stop once the objective falls to this value or below.
    pub tolerance: f64,
    /// Record the objective every this many steps (1 = every step).
    pub log_every: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            max_steps: 10_000,
            eta0: 0.05,
            seed: 0,
            tolerance: 0.0,
            log_every: 1,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be >= 1"));
        }
        if !(self.eta0 > 0.0) {
            return Err(Error::invalid(format!(
                "initial step size must be > 0, got {}",
                self.eta0
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance must be >= 0"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log cadence must be >= 1"));
        }
        Ok(())
    }
}

/// Outcome of a synthesis run.
#[derive(Debug, Clone)]
pub struct SynthResult {
    /// Final iterate.
    pub image: Image,
    /// `(step, objective)` samples at the configured cadence; step 0 is the
    /// initialization, and the final step is always included.
    pub trace: Vec<(usize, f64)>,
    /// Gradient steps actually executed.
    pub steps: usize,
    /// `‖x − ref‖/‖ref‖` against the optional reference.
    pub relative_error: Option<f64>,
}

/// The harmonic schedule: step size at step `k ≥ 1` is exactly `eta0 / k`.
pub fn harmonic_step_size(eta0: f64, k: usize) -> f64 {
    eta0 / k as f64
}

fn check_compatible(x: &Image, bank: &FilterBank, target: &CovarianceMap) -> Result<()> {
    if target.num_filters() != bank.num_filters() {
        return Err(Error::invalid(format!(
            "target map has {} filters, bank has {}",
            target.num_filters(),
            bank.num_filters()
        )));
    }
    let (gh, gw) = (
        x.height().div_ceil(target.stride()),
        x.width().div_ceil(target.stride()),
    );
    if gh != target.grid_height() || gw != target.grid_width() {
        return Err(Error::invalid(format!(
            "image {}x{} yields a {gh}x{gw} grid, target map is {}x{}",
            x.height(),
            x.width(),
            target.grid_height(),
            target.grid_width()
        )));
    }
    Ok(())
}

/// L1 covariance-matching objective and its exact (sub)gradient with respect
/// to the image pixels. Off-diagonal entries count once, matching the
/// serialized measurement set; `sign(0) = 0`.
pub fn synth_objective(
    x: &Image,
    bank: &FilterBank,
    target: &CovarianceMap,
) -> Result<(f64, Image)> {
    synth_objective_with_options(x, bank, target, false)
}

/// [`synth_objective`] with optional double-counting of off-diagonal entries
/// (a sensitivity check, not the canonical objective).
pub fn synth_objective_with_options(
    x: &Image,
    bank: &FilterBank,
    target: &CovarianceMap,
    double_count_offdiag: bool,
) -> Result<(f64, Image)> {
    check_compatible(x, bank, target)?;
    let n = bank.num_filters();
    let nb = target.neighborhood();
    let stride = target.stride();
    let window = target.window().kernel(nb)?;
    let responses = apply(bank, x)?;
    let phi = extract_standard(&responses_map_ref(&responses), nb, stride, target.window())?;

    let (h, w) = (x.height(), x.width());
    let mut objective = 0.0;
    let mut grad_resp = ResponseMap::zeros(n, h, w);
    let offdiag_weight = if double_count_offdiag { 2.0 } else { 1.0 };
    // Reused per-location sign matrix, stored dense and symmetric.
    let mut sign = vec![0.0; n * n];
    for gi in 0..target.grid_height() {
        for gj in 0..target.grid_width() {
            let c = phi.matrix(gi, gj);
            let t = target.matrix(gi, gj);
            let mut any = false;
            for i in 0..n {
                for j in i..n {
                    if target.diagonal_only() && i != j {
                        sign[i * n + j] = 0.0;
                        sign[j * n + i] = 0.0;
                        continue;
                    }
                    let d = c.get(i, j) - t.get(i, j);
                    let weight = if i == j { 1.0 } else { offdiag_weight };
                    objective += weight * d.abs();
                    let s = if d > 0.0 {
                        weight
                    } else if d < 0.0 {
                        -weight
                    } else {
                        0.0
                    };
                    sign[i * n + j] = s;
                    sign[j * n + i] = s;
                    any = any || s != 0.0;
                }
            }
            if !any {
                continue;
            }
            // Scatter ∂E/∂y_i(t) = Σ_P w(t) (2 s[i,i] y_i(t) + Σ_{j≠i} s[i,j] y_j(t)).
            let (r0, c0) = (gi * stride, gj * stride);
            for dr in 0..nb {
                let row = (r0 + dr) % h;
                for dc in 0..nb {
                    let col = (c0 + dc) % w;
                    let wt = window.get(dr, dc);
                    if wt == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        let mut acc = 2.0 * sign[i * n + i] * responses.channel(i).get(row, col);
                        for j in 0..n {
                            if j != i {
                                acc += sign[i * n + j] * responses.channel(j).get(row, col);
                            }
                        }
                        let g = grad_resp.channel(i).get(row, col) + wt * acc;
                        grad_resp.channel_mut(i).set(row, col, g);
                    }
                }
            }
        }
    }
    // Back through the filters: grad_x = Σ_i f̃_i * (∂E/∂y_i).
    let grad = reconstruct(bank, &grad_resp)?;
    Ok((objective, grad))
}

/// `extract_standard` wants a `&ResponseMap`; keep the call site readable.
fn responses_map_ref(r: &ResponseMap) -> &ResponseMap {
    r
}

/// Seeded unit-variance white-noise image.
pub fn white_noise(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(height * width);
    while pixels.len() < height * width {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = (-2.0 * u1.ln()).sqrt();
        pixels.push(r * u2.cos());
        if pixels.len() < height * width {
            pixels.push(r * u2.sin());
        }
    }
    Image::new(height, width, pixels).expect("dimensions validated by caller")
}

/// Synthesize from seeded white noise sized to the target's grid.
pub fn synthesize(
    target: &CovarianceMap,
    bank: &FilterBank,
    config: &SynthConfig,
    reference: Option<&Image>,
) -> Result<SynthResult> {
    config.validate()?;
    let h = target.grid_height() * target.stride();
    let w = target.grid_width() * target.stride();
    let init = white_noise(h, w, config.seed);
    synthesize_from(init, target, bank, config, reference)
}

/// Synthesis with an explicit initial image: iterate
/// `x ← x − (η₀/k) · ∂E/∂x` for `k = 1..max_steps`, stopping early when the
/// objective reaches the tolerance. Aborts with a divergence error if the
/// objective turns non-finite.
pub fn synthesize_from(
    init: Image,
    target: &CovarianceMap,
    bank: &FilterBank,
    config: &SynthConfig,
    reference: Option<&Image>,
) -> Result<SynthResult> {
    config.validate()?;
    if let Some(r) = reference {
        if r.height() != init.height() || r.width() != init.width() {
            return Err(Error::invalid("reference image shape mismatch"));
        }
    }
    let mut x = init;
    let mut trace = Vec::new();
    let mut steps = 0;
    for k in 1..=config.max_steps {
        let (objective, grad) = synth_objective(&x, bank, target)?;
        if !objective.is_finite() {
            return Err(Error::Diverged {
                step: k - 1,
                detail: format!("synthesis objective is {objective}"),
            });
        }
        if (k - 1) % config.log_every == 0 {
            trace.push((k - 1, objective));
        }
        if objective <= config.tolerance {
            break;
        }
        x.add_scaled(&grad, -harmonic_step_size(config.eta0, k));
        steps = k;
    }
    let (final_objective, _) = synth_objective(&x, bank, target)?;
    if !final_objective.is_finite() {
        return Err(Error::Diverged {
            step: steps,
            detail: format!("synthesis objective is {final_objective}"),
        });
    }
    if trace.last().map(|&(s, _)| s) != Some(steps) {
        trace.push((steps, final_objective));
    }
    let relative_error = match reference {
        Some(r) => Some(relative_error(&x, r)?),
        None => None,
    };
    Ok(SynthResult {
        image: x,
        trace,
        steps,
        relative_error,
    })
}

/// `‖x − ref‖₂ / ‖ref‖₂`.
pub fn relative_error(x: &Image, reference: &Image) -> Result<f64> {
    if x.height() != reference.height() || x.width() != reference.width() {
        return Err(Error::invalid("relative_error: shape mismatch"));
    }
    let ref_norm = reference.norm();
    if ref_norm == 0.0 {
        return Err(Error::invalid("relative_error: reference has zero norm"));
    }
    let mut diff = x.clone();
    diff.add_scaled(reference, -1.0);
    Ok(diff.norm() / ref_norm)
}

/// Reference corrupted with seeded Gaussian noise scaled so that
/// `relative_error(out, ref)` equals the requested value exactly (up to
/// round-off). A zero target returns the reference unchanged.
pub fn noise_baseline(reference: &Image, target_rel_error: f64, seed: u64) -> Result<Image> {
    if !(target_rel_error >= 0.0) {
        return Err(Error::invalid("target relative error must be >= 0"));
    }
    if target_rel_error == 0.0 {
        return Ok(reference.clone());
    }
    let noise = white_noise(reference.height(), reference.width(), seed);
    let noise_norm = noise.norm();
    if noise_norm == 0.0 {
        return Err(Error::Numerical("degenerate zero noise draw".into()));
    }
    let sigma = target_rel_error * reference.norm() / noise_norm;
    let mut out = reference.clone();
    out.add_scaled(&noise, sigma);
    Ok(out)
}
