//! Seeded synthetic data: dead-leaves images standing in for natural
//! photographs, analytic filter constructions (oriented derivative-of-Gaussian
//! pairs, a small standard bank), and ensembles with a prescribed power
//! spectrum for the gradient-scaling experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::error::Result;
use crate::filterbank::FilterBank;
use crate::signal::{fft2, ifft2, Image, Kernel, Spectrum};

/// Dead-leaves image: occluding disks with a scale-invariant (`p(r) ∝ r⁻³`)
/// radius distribution and uniform random intensities in [0, 1]. The
/// occlusion structure yields the edge statistics and roughly hyperbolic
/// spectrum that make it a standard stand-in for natural photographs.
pub fn dead_leaves(height: usize, width: usize, seed: u64) -> Image {
    dead_leaves_with(height, width, seed, 2.0)
}

/// [`dead_leaves`] with an explicit minimum disk radius. Larger minima give
/// sparser clutter with longer coherent contours — closer to the look of a
/// photograph of scenes with extended objects.
pub fn dead_leaves_with(height: usize, width: usize, seed: u64, r_min: f64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::zeros(height, width);
    // Background luminance so uncovered pixels are not a special value.
    let bg = rng.gen_range(0.0..1.0);
    for v in img.pixels_mut() {
        *v = bg;
    }
    let r_min = r_min.max(1.0);
    let r_max = (height.min(width) as f64 / 2.0).max(r_min + 1.0);
    let (a, b) = (r_min.powi(-2), r_max.powi(-2));
    // Enough disks to cover the frame many times over.
    let shapes = 8 * height.max(width);
    for _ in 0..shapes {
        let u: f64 = rng.gen_range(0.0..1.0);
        let r = (a - u * (a - b)).powf(-0.5);
        let cy = rng.gen_range(0.0..height as f64);
        let cx = rng.gen_range(0.0..width as f64);
        let lum = rng.gen_range(0.0..1.0);
        let r2 = r * r;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as usize).min(height - 1);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as usize).min(width - 1);
        for y in y0..=y1 {
            let dy = y as f64 - cy;
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                if dy * dy + dx * dx <= r2 {
                    img.set(y, x, lum);
                }
            }
        }
    }
    img
}

/// Centered coordinates of a K×K tap grid rotated to orientation `theta`.
fn rotated_coords(size: usize, theta: f64) -> Vec<(f64, f64)> {
    let c = (size as f64 - 1.0) / 2.0;
    let (sin, cos) = theta.sin_cos();
    let mut coords = Vec::with_capacity(size * size);
    for r in 0..size {
        for col in 0..size {
            let y = r as f64 - c;
            let x = col as f64 - c;
            coords.push((x * cos + y * sin, -x * sin + y * cos));
        }
    }
    coords
}

fn unit_norm(mut taps: Vec<f64>, size: usize) -> Kernel {
    let norm = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for t in &mut taps {
            *t /= norm;
        }
    }
    Kernel::new(size, taps).expect("tap count matches size")
}

fn zero_mean(taps: &mut [f64]) {
    let mean = taps.iter().sum::<f64>() / taps.len() as f64;
    for t in taps {
        *t -= mean;
    }
}

/// Even/odd oriented derivative-of-Gaussian pair at orientation `theta`:
/// the second and first directional derivatives of a Gaussian envelope,
/// zero-mean and unit-norm — a band-pass pair with a 90° phase relationship
/// along the `u` axis.
pub fn oriented_pair(size: usize, sigma: f64, theta: f64) -> Result<(Kernel, Kernel)> {
    let coords = rotated_coords(size, theta);
    let s2 = sigma * sigma;
    let mut even = Vec::with_capacity(size * size);
    let mut odd = Vec::with_capacity(size * size);
    for &(u, v) in &coords {
        let env = (-(u * u + v * v) / (2.0 * s2)).exp();
        even.push((u * u / s2 - 1.0) * env);
        odd.push(u * env);
    }
    zero_mean(&mut even);
    zero_mean(&mut odd);
    Ok((unit_norm(even, size), unit_norm(odd, size)))
}

/// Four-filter analytic bank: Gaussian low-pass (carries mean luminance),
/// horizontal and vertical first derivatives, and a Laplacian of Gaussian.
/// All unit-norm; the band-pass kernels are zero-mean.
pub fn standard_bank(kernel_size: usize, blur_sigma: f64) -> Result<FilterBank> {
    let sigma = kernel_size as f64 / 5.0;
    let s2 = sigma * sigma;
    let coords = rotated_coords(kernel_size, 0.0);
    let mut low = Vec::with_capacity(coords.len());
    let mut gx = Vec::with_capacity(coords.len());
    let mut gy = Vec::with_capacity(coords.len());
    let mut log = Vec::with_capacity(coords.len());
    for &(x, y) in &coords {
        let env = (-(x * x + y * y) / (2.0 * s2)).exp();
        low.push(env);
        gx.push(x * env);
        gy.push(y * env);
        log.push(((x * x + y * y) / s2 - 2.0) * env);
    }
    zero_mean(&mut gx);
    zero_mean(&mut gy);
    zero_mean(&mut log);
    FilterBank::new(
        vec![
            unit_norm(low, kernel_size),
            unit_norm(gx, kernel_size),
            unit_norm(gy, kernel_size),
            unit_norm(log, kernel_size),
        ],
        blur_sigma,
    )
}

/// Bank of `n ≥ 2` filters for the variance-map control: low-pass, Laplacian
/// of Gaussian, then even/odd oriented pairs at evenly spaced orientations.
pub fn variance_control_bank(kernel_size: usize, n: usize, blur_sigma: f64) -> Result<FilterBank> {
    let base = standard_bank(kernel_size, blur_sigma)?;
    let mut kernels = vec![base.kernel(0).clone(), base.kernel(3).clone()];
    let sigma = kernel_size as f64 / 5.0;
    let pairs = n.saturating_sub(2).div_ceil(2).max(1);
    'outer: for p in 0..pairs {
        let theta = std::f64::consts::PI * p as f64 / pairs as f64;
        let (even, odd) = oriented_pair(kernel_size, sigma, theta)?;
        for k in [even, odd] {
            if kernels.len() == n {
                break 'outer;
            }
            kernels.push(k);
        }
    }
    FilterBank::new(kernels, blur_sigma)
}

/// Ensemble of images whose expected power spectrum is radially symmetric and
/// spans `[1, spectrum_range]` between the highest and lowest spatial
/// frequencies: white noise shaped by `√S(ω)` in the Fourier domain.
pub fn spectrum_ramp_ensemble(
    count: usize,
    size: usize,
    spectrum_range: f64,
    seed: u64,
) -> Result<Vec<Image>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Radial profile S(r) = spectrum_range^(1 - r/r_max): S(0) = range,
    // S(r_max) = 1, smooth in between.
    let r_max = (size as f64 / 2.0) * std::f64::consts::SQRT_2;
    let mut shape = vec![0.0f64; size * size];
    for u in 0..size {
        for v in 0..size {
            let fu = if u <= size / 2 { u } else { size - u } as f64;
            let fv = if v <= size / 2 { v } else { size - v } as f64;
            let r = (fu * fu + fv * fv).sqrt();
            shape[u * size + v] = spectrum_range.powf(1.0 - r / r_max).sqrt();
        }
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let noise = Image::new(
            size,
            size,
            (0..size * size)
                .map(|_| {
                    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    (-2.0 * u1.ln()).sqrt() * u2.cos()
                })
                .collect(),
        )?;
        let spec = fft2(&noise);
        let bins: Vec<Complex<f64>> = spec
            .bins()
            .iter()
            .zip(&shape)
            .map(|(b, s)| b * s)
            .collect();
        out.push(ifft2(&Spectrum::from_parts(size, size, bins)?));
    }
    Ok(out)
}
