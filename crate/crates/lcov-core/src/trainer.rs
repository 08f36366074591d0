//! Stochastic gradient descent over an image ensemble, with the
//! Fourier-domain gradient-scaling accelerator, checkpointing, and
//! convergence logging.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::objective::{total_energy_and_gradient, EnergyBreakdown, FilterGradient, PatchSpec};
use crate::signal::{fft2, ifft2, kernel_to_image, Image, Kernel, Spectrum};

/// Bins below this fraction of the maximum are floored before division, so
/// unpopulated frequencies cannot blow the scaled gradient up.
pub const SPECTRUM_FLOOR_RELATIVE: f64 = 1e-6;

/// Crops drawn when estimating the ensemble spectrum and normalization.
const ENSEMBLE_PROBE_CROPS: usize = 100;

/// Steps a candidate learning rate must survive in the automatic probe.
const PROBE_STEPS: usize = 50;

/// Taps beyond this magnitude can only come from a runaway step, and below
/// it no response, Gram entry, or energy can overflow an f64 — so divergence
/// is always caught here rather than by some downstream validation.
const TAP_DIVERGENCE_LIMIT: f64 = 1e30;

/// Training hyperparameters. Defaults carry the reference values: 20×20
/// kernels, 16×16 patches, window and blur sigma 3, λ = 3500, μ = 100.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub num_filters: usize,
    pub kernel_size: usize,
    pub patch_size: usize,
    /// Patch grid stride for the local term; defaults to half the patch.
    pub patch_stride: usize,
    pub window_sigma: f64,
    pub blur_sigma: f64,
    pub lambda: f64,
    pub mu: f64,
    /// Fixed learning rate; `None` runs the automatic halving probe.
    pub learning_rate: Option<f64>,
    pub num_steps: usize,
    /// Square crop side; must be at least `kernel_size + patch_size`.
    pub crop_size: usize,
    pub seed: u64,
    pub gradient_scaling: bool,
    /// Fixed accumulation order and zeroed wall-clock fields in the log, so
    /// two runs with the same seed produce identical bytes everywhere.
    pub deterministic: bool,
    /// Snapshot the bank every this many steps (0 = only the final bank).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_filters: 4,
            kernel_size: 20,
            patch_size: 16,
            patch_stride: 8,
            window_sigma: 3.0,
            blur_sigma: 3.0,
            lambda: 3500.0,
            mu: 100.0,
            learning_rate: None,
            num_steps: 1000,
            crop_size: 36,
            seed: 0,
            gradient_scaling: true,
            deterministic: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.num_filters == 0 || self.kernel_size == 0 || self.patch_size == 0 {
            return Err(Error::invalid("filter, kernel, and patch sizes must be positive"));
        }
        if self.patch_stride == 0 || self.patch_stride > self.patch_size {
            return Err(Error::invalid("patch stride must satisfy 1 <= stride <= patch size"));
        }
        if !(self.window_sigma > 0.0) || self.blur_sigma < 0.0 {
            return Err(Error::invalid("window sigma must be > 0 and blur sigma >= 0"));
        }
        if !(self.lambda >= 0.0) || !(self.mu >= 0.0) {
            return Err(Error::invalid("lambda and mu must be >= 0"));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr >= 0.0) {
                return Err(Error::invalid("learning rate must be >= 0"));
            }
        }
        if self.crop_size < self.kernel_size + self.patch_size {
            return Err(Error::invalid(format!(
                "crop size {} must be at least kernel {} + patch {}",
                self.crop_size, self.kernel_size, self.patch_size
            )));
        }
        Ok(())
    }

    fn patch_spec(&self) -> Result<PatchSpec> {
        PatchSpec::gaussian(self.patch_size, self.patch_stride, self.window_sigma)
    }
}

/// Non-empty collection of training images.
#[derive(Debug, Clone)]
pub struct ImageEnsemble {
    images: Vec<Image>,
}

impl ImageEnsemble {
    pub fn new(images: Vec<Image>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("image ensemble is empty"));
        }
        Ok(ImageEnsemble { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    /// Uniform random crop: uniform image, uniform position.
    pub fn sample_crop(&self, size: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
        let img = &self.images[rng.gen_range(0..self.images.len())];
        if img.height() < size || img.width() < size {
            return Err(Error::invalid(format!(
                "image {}x{} smaller than crop size {size}",
                img.height(),
                img.width()
            )));
        }
        let r0 = rng.gen_range(0..=img.height() - size);
        let c0 = rng.gen_range(0..=img.width() - size);
        img.crop(r0, c0, size)
    }

    /// Standard deviation pooled over random crops; the trainer divides every
    /// crop by this one ensemble-level constant.
    pub fn estimate_std(&self, crop_size: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for _ in 0..ENSEMBLE_PROBE_CROPS {
            let crop = self.sample_crop(crop_size, &mut rng)?;
            for &v in crop.pixels() {
                sum += v;
                sum_sq += v * v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = (sum_sq / count as f64 - mean * mean).max(0.0);
        if var == 0.0 {
            return Err(Error::invalid("ensemble is constant; cannot normalize"));
        }
        Ok(var.sqrt())
    }
}

/// Subtract the crop's own mean and divide by the ensemble deviation.
pub fn preprocess_crop(crop: &Image, ensemble_std: f64) -> Image {
    let mean = crop.mean();
    let mut out = crop.clone();
    for v in out.pixels_mut() {
        *v = (*v - mean) / ensemble_std;
    }
    out
}

/// Mean squared Fourier magnitude `E[|x̂(ω)|²]` over ensemble crops.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    size: usize,
    bins: Vec<f64>,
    samples: usize,
}

impl SpectrumEstimate {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Build directly from bins (tests and synthetic profiles).
    pub fn from_bins(size: usize, bins: Vec<f64>, samples: usize) -> Result<Self> {
        if bins.len() != size * size {
            return Err(Error::invalid("bin count does not match size"));
        }
        if bins.iter().any(|&b| !b.is_finite() || b < 0.0) {
            return Err(Error::invalid("spectrum bins must be finite and >= 0"));
        }
        Ok(SpectrumEstimate {
            size,
            bins,
            samples,
        })
    }
}

/// Average `|fft2(crop)|²` over `count` random crops. Deterministic per seed.
pub fn estimate_mean_spectrum(
    dataset: &ImageEnsemble,
    crop_size: usize,
    count: usize,
    seed: u64,
) -> Result<SpectrumEstimate> {
    if count == 0 {
        return Err(Error::invalid("spectrum estimate needs at least one crop"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bins = vec![0.0f64; crop_size * crop_size];
    for _ in 0..count {
        let crop = dataset.sample_crop(crop_size, &mut rng)?;
        for (acc, p) in bins.iter_mut().zip(fft2(&crop).power()) {
            *acc += p / count as f64;
        }
    }
    SpectrumEstimate::from_bins(crop_size, bins, count)
}

/// Divide each filter gradient, bin-wise in the Fourier domain at the crop
/// resolution, by `√(E[|x̂(ω)|²])` (floored), then crop back to tap support.
pub fn scale_gradient(g: &FilterGradient, s: &SpectrumEstimate) -> Result<FilterGradient> {
    let ks = match g.kernels().first() {
        Some(k) => k.size(),
        None => return Err(Error::invalid("empty gradient")),
    };
    if s.size < ks {
        return Err(Error::invalid(format!(
            "spectrum resolution {} below kernel size {ks}",
            s.size
        )));
    }
    let max_bin = s.bins.iter().cloned().fold(0.0f64, f64::max);
    if max_bin == 0.0 {
        return Err(Error::invalid("all-zero spectrum estimate"));
    }
    let floor = SPECTRUM_FLOOR_RELATIVE * max_bin;
    let denom: Vec<f64> = s.bins.iter().map(|&b| b.max(floor).sqrt()).collect();
    let mut out = FilterGradient::zeros(g.num_filters(), ks);
    for (i, k) in g.kernels().iter().enumerate() {
        let embedded = kernel_to_image(k, s.size, s.size)?;
        let spec = fft2(&embedded);
        let bins: Vec<Complex<f64>> = spec
            .bins()
            .iter()
            .zip(&denom)
            .map(|(b, d)| b / d)
            .collect();
        let back = ifft2(&Spectrum::from_parts(s.size, s.size, bins)?);
        // Read the embedded positions back out (anchor at the origin).
        let c = (ks / 2) as isize;
        let mut taps = vec![0.0; ks * ks];
        for ar in 0..ks {
            for ac in 0..ks {
                let r = (ar as isize - c).rem_euclid(s.size as isize) as usize;
                let col = (ac as isize - c).rem_euclid(s.size as isize) as usize;
                taps[ar * ks + ac] = back.get(r, col);
            }
        }
        *out.kernel_mut(i) = Kernel::new(ks, taps)?;
    }
    Ok(out)
}

/// One energy/timing record per training step.
#[derive(Debug, Clone, Copy)]
pub struct TrainRecord {
    pub step: usize,
    pub energy: EnergyBreakdown,
    pub elapsed_seconds: f64,
}

/// Step records plus checkpointed bank snapshots.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub checkpoints: Vec<(usize, FilterBank)>,
    /// Learning rate actually used (after the probe, if it ran).
    pub learning_rate: f64,
}

/// Run stochastic gradient descent and return the trained bank and its log.
///
/// Each step samples one random crop, evaluates the full objective gradient,
/// optionally rescales it by the ensemble spectrum, and takes a fixed-rate
/// step. Bit-reproducible for a fixed seed with the deterministic flag.
pub fn train(dataset: &ImageEnsemble, config: &TrainConfig) -> Result<(FilterBank, TrainLog)> {
    config.validate()?;
    let patch_spec = config.patch_spec()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init_seed = rng.gen::<u64>();
    let std_seed = rng.gen::<u64>();
    let spectrum_seed = rng.gen::<u64>();
    let bank0 = FilterBank::random(
        config.num_filters,
        config.kernel_size,
        config.blur_sigma,
        init_seed,
    )?;
    let ensemble_std = dataset.estimate_std(config.crop_size, std_seed)?;
    let spectrum = if config.gradient_scaling {
        Some(estimate_mean_spectrum(
            dataset,
            config.crop_size,
            ENSEMBLE_PROBE_CROPS,
            spectrum_seed,
        )?)
    } else {
        None
    };

    let learning_rate = match config.learning_rate {
        Some(lr) => lr,
        // Nothing will step, so don't spend a probe on it.
        None if config.num_steps == 0 => 0.0,
        None => probe_learning_rate(
            dataset,
            config,
            &patch_spec,
            &bank0,
            ensemble_std,
            spectrum.as_ref(),
            rng.clone(),
        )?,
    };

    let mut bank = bank0;
    let mut log = TrainLog {
        learning_rate,
        ..TrainLog::default()
    };
    let started = Instant::now();
    for step in 1..=config.num_steps {
        let crop = preprocess_crop(&dataset.sample_crop(config.crop_size, &mut rng)?, ensemble_std);
        let (energy, gradient) =
            total_energy_and_gradient(&crop, &bank, &patch_spec, config.lambda, config.mu)?;
        if !energy.total.is_finite() || !gradient.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("training energy is {}", energy.total),
            });
        }
        let gradient = match &spectrum {
            Some(s) => scale_gradient(&gradient, s)?,
            None => gradient,
        };
        apply_step(&mut bank, &gradient, learning_rate)?;
        if bank
            .kernels()
            .iter()
            .flat_map(|k| k.taps())
            .any(|&t| !(t.abs() <= TAP_DIVERGENCE_LIMIT))
        {
            return Err(Error::Diverged {
                step,
                detail: "filter taps exploded".into(),
            });
        }
        log.records.push(TrainRecord {
            step,
            energy,
            elapsed_seconds: if config.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
        });
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            log.checkpoints.push((step, bank.clone()));
        }
    }
    Ok((bank, log))
}

/// `f_i ← f_i − lr · g_i` for every filter.
fn apply_step(bank: &mut FilterBank, gradient: &FilterGradient, lr: f64) -> Result<()> {
    if lr == 0.0 {
        return Ok(());
    }
    for i in 0..bank.num_filters() {
        let mut k = bank.kernel(i).clone();
        for (t, g) in k.taps_mut().iter_mut().zip(gradient.kernel(i).taps()) {
            *t -= lr * g;
        }
        bank.set_kernel(i, k)?;
    }
    Ok(())
}

/// Halve a starting rate until `PROBE_STEPS` consecutive steps keep the
/// energy within 10× of its starting value and finite.
#[allow(clippy::too_many_arguments)]
fn probe_learning_rate(
    dataset: &ImageEnsemble,
    config: &TrainConfig,
    patch_spec: &PatchSpec,
    bank0: &FilterBank,
    ensemble_std: f64,
    spectrum: Option<&SpectrumEstimate>,
    rng: ChaCha8Rng,
) -> Result<f64> {
    let mut lr = 1.0;
    'candidates: for _ in 0..60 {
        let mut bank = bank0.clone();
        let mut probe_rng = rng.clone();
        let mut initial_energy = None;
        for _ in 0..PROBE_STEPS {
            let crop = preprocess_crop(
                &dataset.sample_crop(config.crop_size, &mut probe_rng)?,
                ensemble_std,
            );
            let step = total_energy_and_gradient(&crop, &bank, patch_spec, config.lambda, config.mu);
            let (energy, gradient) = match step {
                Ok(v) => v,
                Err(_) => {
                    lr *= 0.5;
                    continue 'candidates;
                }
            };
            let baseline = *initial_energy.get_or_insert(energy.total.abs().max(1.0));
            if !energy.total.is_finite() || energy.total.abs() > 10.0 * baseline {
                lr *= 0.5;
                continue 'candidates;
            }
            let gradient = match spectrum {
                Some(s) => scale_gradient(&gradient, s)?,
                None => gradient,
            };
            if !gradient.is_finite() {
                lr *= 0.5;
                continue 'candidates;
            }
            apply_step(&mut bank, &gradient, lr)?;
        }
        return Ok(lr);
    }
    Err(Error::Numerical(
        "learning-rate probe failed to find a stable rate".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{dead_leaves, spectrum_ramp_ensemble};

    fn leaves_ensemble(n: usize, size: usize, seed: u64) -> ImageEnsemble {
        ImageEnsemble::new((0..n).map(|i| dead_leaves(size, size, seed + i as u64)).collect())
            .unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            num_filters: 2,
            kernel_size: 6,
            patch_size: 8,
            patch_stride: 4,
            window_sigma: 2.0,
            blur_sigma: 1.5,
            lambda: 10.0,
            mu: 1.0,
            learning_rate: Some(1e-8),
            num_steps: 10,
            crop_size: 16,
            seed: 42,
            gradient_scaling: false,
            deterministic: true,
            checkpoint_every: 0,
        }
    }

    #[test]
    fn spectrum_constant_image_is_dc_only() {
        let img = Image::new(32, 32, vec![2.0; 1024]).unwrap();
        let ens = ImageEnsemble::new(vec![img]).unwrap();
        let s = estimate_mean_spectrum(&ens, 16, 5, 1).unwrap();
        assert!(s.bins()[0] > 0.0);
        for (i, &b) in s.bins().iter().enumerate() {
            if i != 0 {
                assert!(b < 1e-12 * s.bins()[0], "bin {i} = {b}");
            }
        }
    }

    #[test]
    fn spectrum_white_noise_is_flat() {
        let noise: Vec<Image> = (0..8)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(200 + i);
                Image::new(
                    64,
                    64,
                    (0..64 * 64)
                        .map(|_| {
                            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                            (-2.0 * u1.ln()).sqrt() * u2.cos()
                        })
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let ens = ImageEnsemble::new(noise).unwrap();
        let s = estimate_mean_spectrum(&ens, 32, 500, 2).unwrap();
        let mean = s.bins().iter().sum::<f64>() / s.bins().len() as f64;
        let sd = (s.bins().iter().map(|b| (b - mean) * (b - mean)).sum::<f64>()
            / s.bins().len() as f64)
            .sqrt();
        assert!(sd / mean <= 0.2, "relative spread {}", sd / mean);
    }

    #[test]
    fn spectrum_natural_ensemble_decays_with_radius() {
        let ens = leaves_ensemble(6, 64, 300);
        let s = estimate_mean_spectrum(&ens, 32, 200, 3).unwrap();
        // Spearman rank correlation between frequency radius and magnitude.
        let n = 32usize;
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u == 0 && v == 0 {
                    continue; // DC carries the mean, not structure
                }
                let fu = if u <= n / 2 { u } else { n - u } as f64;
                let fv = if v <= n / 2 { v } else { n - v } as f64;
                pairs.push(((fu * fu + fv * fv).sqrt(), s.bins()[u * n + v]));
            }
        }
        let rank = |vals: Vec<f64>| -> Vec<f64> {
            let mut idx: Vec<usize> = (0..vals.len()).collect();
            idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
            let mut out = vec![0.0; vals.len()];
            for (r, &i) in idx.iter().enumerate() {
                out[i] = r as f64;
            }
            out
        };
        let rr = rank(pairs.iter().map(|p| p.0).collect());
        let rm = rank(pairs.iter().map(|p| p.1).collect());
        let mr = rr.iter().sum::<f64>() / rr.len() as f64;
        let mm = rm.iter().sum::<f64>() / rm.len() as f64;
        let cov: f64 = rr.iter().zip(&rm).map(|(a, b)| (a - mr) * (b - mm)).sum();
        let va: f64 = rr.iter().map(|a| (a - mr) * (a - mr)).sum();
        let vb: f64 = rm.iter().map(|b| (b - mm) * (b - mm)).sum();
        let rho = cov / (va.sqrt() * vb.sqrt());
        assert!(rho < -0.5, "rank correlation {rho} not strongly negative");
    }

    #[test]
    fn scale_gradient_flat_spectrum_uniform() {
        let mut g = FilterGradient::zeros(1, 4);
        for (i, t) in g.kernel_mut(0).taps_mut().iter_mut().enumerate() {
            *t = i as f64 - 7.5;
        }
        let s = SpectrumEstimate::from_bins(16, vec![4.0; 256], 1).unwrap();
        let out = scale_gradient(&g, &s).unwrap();
        for (a, b) in out.kernel(0).taps().iter().zip(g.kernel(0).taps()) {
            assert!((a - b / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_gradient_single_bin() {
        // Kernel size = spectrum size, gradient = a pure cosine: exactly one
        // conjugate bin pair, scaled by 1/√bin.
        let n = 8usize;
        let mut g = FilterGradient::zeros(1, n);
        for r in 0..n {
            for c in 0..n {
                g.kernel_mut(0).taps_mut()[r * n + c] =
                    (std::f64::consts::TAU * c as f64 / n as f64).cos();
            }
        }
        let mut bins = vec![1.0; n * n];
        // The cosine lives in bins (0,1) and (0,7).
        bins[1] = 25.0;
        bins[n - 1] = 25.0;
        let s = SpectrumEstimate::from_bins(n, bins, 1).unwrap();
        let out = scale_gradient(&g, &s).unwrap();
        for (a, b) in out.kernel(0).taps().iter().zip(g.kernel(0).taps()) {
            assert!((a - b / 5.0).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn scale_gradient_two_band_attenuation() {
        // Low band carries power 1e4, high band 1: low-frequency gradient
        // content comes out 100× smaller relative to high.
        let n = 16usize;
        let mut bins = vec![1.0; n * n];
        for u in 0..n {
            for v in 0..n {
                let fu = if u <= n / 2 { u } else { n - u };
                let fv = if v <= n / 2 { v } else { n - v };
                if fu + fv <= 2 {
                    bins[u * n + v] = 1e4;
                }
            }
        }
        let s = SpectrumEstimate::from_bins(n, bins, 1).unwrap();
        let mut low = FilterGradient::zeros(1, n);
        let mut high = FilterGradient::zeros(1, n);
        for r in 0..n {
            for c in 0..n {
                let phase = std::f64::consts::TAU * c as f64 / n as f64;
                low.kernel_mut(0).taps_mut()[r * n + c] = phase.cos(); // bin (0,1)
                high.kernel_mut(0).taps_mut()[r * n + c] = (phase * 8.0).cos(); // Nyquist
            }
        }
        let lo = scale_gradient(&low, &s).unwrap();
        let hi = scale_gradient(&high, &s).unwrap();
        let norm = |g: &FilterGradient| g.kernel(0).norm();
        let ratio = (norm(&low) / norm(&lo)) / (norm(&high) / norm(&hi));
        assert!((ratio - 100.0).abs() < 1.0, "attenuation ratio {ratio}");
    }

    #[test]
    fn scale_gradient_preserves_zero() {
        let g = FilterGradient::zeros(2, 5);
        let s = SpectrumEstimate::from_bins(16, vec![3.0; 256], 1).unwrap();
        let out = scale_gradient(&g, &s).unwrap();
        assert!(out.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_gradient_rejects_zero_spectrum() {
        let g = FilterGradient::zeros(1, 4);
        let s = SpectrumEstimate::from_bins(8, vec![0.0; 64], 1).unwrap();
        assert!(scale_gradient(&g, &s).is_err());
    }

    #[test]
    fn train_zero_learning_rate_keeps_filters() {
        let ens = leaves_ensemble(2, 32, 400);
        let config = TrainConfig {
            learning_rate: Some(0.0),
            num_steps: 5,
            ..small_config()
        };
        let (bank, log) = train(&ens, &config).unwrap();
        let init = FilterBank::random(2, 6, 1.5, {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.gen::<u64>()
        })
        .unwrap();
        for i in 0..2 {
            assert_eq!(bank.kernel(i).taps(), init.kernel(i).taps());
        }
        assert_eq!(log.records.len(), 5);
    }

    #[test]
    fn train_deterministic_same_seed() {
        let ens = leaves_ensemble(3, 32, 500);
        let config = TrainConfig {
            num_steps: 8,
            gradient_scaling: true,
            ..small_config()
        };
        let (a, la) = train(&ens, &config).unwrap();
        let (b, lb) = train(&ens, &config).unwrap();
        for i in 0..2 {
            assert_eq!(a.kernel(i).taps(), b.kernel(i).taps());
        }
        assert_eq!(la.records.len(), lb.records.len());
        for (ra, rb) in la.records.iter().zip(&lb.records) {
            assert_eq!(ra.energy.total, rb.energy.total);
            assert_eq!(ra.elapsed_seconds, 0.0);
        }
    }

    #[test]
    fn train_energy_trends_down() {
        let ens = leaves_ensemble(4, 48, 600);
        let config = TrainConfig {
            num_steps: 200,
            learning_rate: None, // exercise the probe
            ..small_config()
        };
        let (_, log) = train(&ens, &config).unwrap();
        assert!(log.learning_rate > 0.0);
        let median = |xs: &mut [f64]| -> f64 {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            xs[xs.len() / 2]
        };
        let mut early: Vec<f64> = log.records[..100].iter().map(|r| r.energy.total).collect();
        let mut late: Vec<f64> = log.records[100..200].iter().map(|r| r.energy.total).collect();
        assert!(
            median(&mut late) < median(&mut early),
            "median energy did not decrease"
        );
    }

    #[test]
    fn train_checkpoints_recorded() {
        let ens = leaves_ensemble(2, 32, 700);
        let config = TrainConfig {
            num_steps: 9,
            checkpoint_every: 4,
            ..small_config()
        };
        let (_, log) = train(&ens, &config).unwrap();
        let steps: Vec<usize> = log.checkpoints.iter().map(|(s, _)| *s).collect();
        assert_eq!(steps, vec![4, 8]);
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn train_aborts_on_divergence() {
        let ens = leaves_ensemble(2, 32, 750);
        let config = TrainConfig {
            learning_rate: Some(1e6),
            num_steps: 50,
            ..small_config()
        };
        match train(&ens, &config) {
            Err(Error::Diverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn train_rejects_undersized_crop() {
        let ens = leaves_ensemble(1, 32, 800);
        let config = TrainConfig {
            crop_size: 10, // < kernel 6 + patch 8
            ..small_config()
        };
        assert!(train(&ens, &config).is_err());
    }

    #[test]
    fn train_scaling_does_not_break_on_shaped_spectrum() {
        let ens = ImageEnsemble::new(spectrum_ramp_ensemble(4, 32, 100.0, 900).unwrap()).unwrap();
        let config = TrainConfig {
            num_steps: 10,
            gradient_scaling: true,
            ..small_config()
        };
        let (bank, _) = train(&ens, &config).unwrap();
        assert!(bank.kernels().iter().all(Kernel::is_finite));
    }
}
