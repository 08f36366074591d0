//! The three-term training energy and its exact gradient with respect to the
//! filter taps:
//!
//! ```text
//! E = E_local_dim + λ E_recons + μ E_global_dim
//!   = Σ_P ‖Y_P‖_*  +  λ ‖x − Σ_i f̃_i * y_i‖²  −  μ ‖Z̃‖_*
//! ```
//!
//! Response-space gradients from the first two terms are pulled back to the
//! K×K tap support by correlating with the image; the reconstruction and
//! global terms additionally differentiate through the kernels that appear a
//! second time (in `f̃_i * y_i` and inside `z̃_i`).

use crate::error::{Error, Result};
use crate::filterbank::{apply, modulated_reconstructions, reconstruct, FilterBank, ResponseMap};
use crate::linalg::{nuclear_norm, nuclear_norm_subgradient_default, Matrix};
use crate::signal::{convolve, gaussian_window, tap_correlation, Image, Kernel};

/// Patch geometry and per-pixel weighting for the local-dimensionality term.
#[derive(Debug, Clone)]
pub struct PatchSpec {
    patch_size: usize,
    stride: usize,
    weight_window: Kernel,
}

impl PatchSpec {
    /// Patch spec with a normalized Gaussian weight window of width `sigma`.
    pub fn gaussian(patch_size: usize, stride: usize, sigma: f64) -> Result<Self> {
        PatchSpec::with_window(patch_size, stride, gaussian_window(patch_size, sigma)?)
    }

    pub fn with_window(patch_size: usize, stride: usize, weight_window: Kernel) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::invalid("patch size must be >= 1"));
        }
        if stride == 0 || stride > patch_size {
            return Err(Error::invalid(format!(
                "stride must satisfy 1 <= stride <= patch size, got {stride} for {patch_size}"
            )));
        }
        if weight_window.size() != patch_size {
            return Err(Error::invalid(format!(
                "weight window is {}x{}, patch is {patch_size}x{patch_size}",
                weight_window.size(),
                weight_window.size()
            )));
        }
        if !weight_window.is_finite() || weight_window.taps().iter().any(|&t| t < 0.0) {
            return Err(Error::invalid("weight window must be finite and non-negative"));
        }
        Ok(PatchSpec {
            patch_size,
            stride,
            weight_window,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn weight_window(&self) -> &Kernel {
        &self.weight_window
    }

    /// Top-left corners of the patch grid: starts at (0,0), strides
    /// uniformly, drops partial patches at the boundary.
    pub fn grid(&self, height: usize, width: usize) -> Vec<(usize, usize)> {
        let mut corners = Vec::new();
        let mut r = 0;
        while r + self.patch_size <= height {
            let mut c = 0;
            while c + self.patch_size <= width {
                corners.push((r, c));
                c += self.stride;
            }
            r += self.stride;
        }
        corners
    }
}

/// The energy split by term. `global_dim` stores `−‖Z̃‖_*` (so it is ≤ 0) and
/// `total = local_dim + lambda·recons + mu·global_dim`.
#[derive(Debug, Clone, Copy)]
pub struct EnergyBreakdown {
    pub local_dim: f64,
    pub recons: f64,
    pub global_dim: f64,
    pub total: f64,
    pub lambda: f64,
    pub mu: f64,
}

/// Per-filter tap gradients, same shapes as the bank's kernels.
#[derive(Debug, Clone)]
pub struct FilterGradient {
    grads: Vec<Kernel>,
}

impl FilterGradient {
    pub fn zeros(num_filters: usize, kernel_size: usize) -> Self {
        let zero = Kernel::new(kernel_size, vec![0.0; kernel_size * kernel_size])
            .expect("kernel_size >= 1");
        FilterGradient {
            grads: vec![zero; num_filters],
        }
    }

    pub fn num_filters(&self) -> usize {
        self.grads.len()
    }

    pub fn kernel(&self, i: usize) -> &Kernel {
        &self.grads[i]
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.grads
    }

    pub fn kernel_mut(&mut self, i: usize) -> &mut Kernel {
        &mut self.grads[i]
    }

    /// `self += c * other`, filter by filter.
    pub fn add_scaled(&mut self, other: &FilterGradient, c: f64) {
        assert_eq!(self.grads.len(), other.grads.len(), "filter count mismatch");
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (t, s) in a.taps_mut().iter_mut().zip(b.taps()) {
                *t += c * s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|k| k.taps().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Kernel::is_finite)
    }

    /// Flatten all taps into one vector (filter-major), for logging and tests.
    pub fn flatten(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|k| k.taps().iter().copied()).collect()
    }
}

/// `E_local_dim = Σ_P ‖Y_P‖_*` over the patch grid, with each patch column
/// scaled by `√w(t)`. Returns the energy and its gradient with respect to the
/// response map (overlapping patch contributions summed).
pub fn local_dim_energy(r: &ResponseMap, spec: &PatchSpec) -> Result<(f64, ResponseMap)> {
    let (n, h, w, p) = (r.num_channels(), r.height(), r.width(), spec.patch_size());
    if p > h || p > w {
        return Err(Error::invalid(format!(
            "patch {p}x{p} larger than response map {h}x{w}"
        )));
    }
    let sqrt_w: Vec<f64> = spec.weight_window().taps().iter().map(|v| v.sqrt()).collect();
    let mut energy = 0.0;
    let mut grad = ResponseMap::zeros(n, h, w);
    let mut y_p = Matrix::zeros(n, p * p);
    for (r0, c0) in spec.grid(h, w) {
        for i in 0..n {
            let chan = r.channel(i);
            for pr in 0..p {
                for pc in 0..p {
                    y_p.set(i, pr * p + pc, chan.get(r0 + pr, c0 + pc) * sqrt_w[pr * p + pc]);
                }
            }
        }
        energy += nuclear_norm(&y_p)?;
        let sub = nuclear_norm_subgradient_default(&y_p)?;
        for i in 0..n {
            let chan = grad.channel_mut(i);
            for pr in 0..p {
                for pc in 0..p {
                    let v = chan.get(r0 + pr, c0 + pc)
                        + sub.get(i, pr * p + pc) * sqrt_w[pr * p + pc];
                    chan.set(r0 + pr, c0 + pc, v);
                }
            }
        }
    }
    Ok((energy, grad))
}

/// `E_recons = ‖x − Σ_i f̃_i * y_i‖²`. Returns the energy and its gradient
/// with respect to the responses, `−2 · apply(bank, residual)`.
pub fn recons_energy(img: &Image, bank: &FilterBank, r: &ResponseMap) -> Result<(f64, ResponseMap)> {
    let (energy, grad, _) = recons_energy_with_residual(img, bank, r)?;
    Ok((energy, grad))
}

fn recons_energy_with_residual(
    img: &Image,
    bank: &FilterBank,
    r: &ResponseMap,
) -> Result<(f64, ResponseMap, Image)> {
    if r.height() != img.height() || r.width() != img.width() {
        return Err(Error::invalid("response map and image shapes differ"));
    }
    let mut residual = img.clone();
    residual.add_scaled(&reconstruct(bank, r)?, -1.0);
    let energy = residual.dot(&residual);
    let mut grad = apply(bank, &residual)?;
    for i in 0..grad.num_channels() {
        let chan = grad.channel_mut(i);
        for v in chan.pixels_mut() {
            *v *= -2.0;
        }
    }
    Ok((energy, grad, residual))
}

/// `E_global_dim = −‖Z̃‖_*` with `Z̃` stacking the modulated reconstructions
/// (rows = filters, columns = pixels). Returns the energy and its gradient
/// with respect to the filter taps, chained through both appearances of the
/// windowed kernel `g_i` inside `z̃_i` and through the window back to `f_i`.
pub fn global_dim_energy(img: &Image, bank: &FilterBank) -> Result<(f64, FilterGradient)> {
    let (n, ks) = (bank.num_filters(), bank.kernel_size());
    let z = modulated_reconstructions(bank, img)?;
    let t = img.height() * img.width();
    let mut zmat = Matrix::zeros(n, t);
    for i in 0..n {
        for (j, &v) in z.channel(i).pixels().iter().enumerate() {
            zmat.set(i, j, v);
        }
    }
    let energy = -nuclear_norm(&zmat)?;
    let sub = nuclear_norm_subgradient_default(&zmat)?;
    let mut grad = FilterGradient::zeros(n, ks);
    for i in 0..n {
        // q_i = ∂(−‖Z̃‖_*)/∂z̃_i: the negated subgradient row as an image.
        let q = Image::new(
            img.height(),
            img.width(),
            (0..t).map(|j| -sub.get(i, j)).collect(),
        )?;
        let g = bank.windowed_kernel(i)?;
        let v = convolve(img, &g)?;
        // z̃_i = adjoint_convolve(v_i, g_i): one contribution through the
        // outer kernel, one through v_i = g_i * x.
        let mut dg = tap_correlation(&v, &q, ks)?;
        let inner = tap_correlation(&convolve(&q, &g)?, img, ks)?;
        for (a, b) in dg.taps_mut().iter_mut().zip(inner.taps()) {
            *a += b;
        }
        // Window the chain back onto the raw taps: ∂g/∂f = h tap-wise.
        if bank.blur_sigma() > 0.0 {
            dg = dg.windowed(bank.blur())?;
        }
        grad.grads[i] = dg;
    }
    Ok((energy, grad))
}

/// Full objective and its exact gradient with respect to the filter taps.
///
/// Response-space gradients from `E_local_dim` and `E_recons` are pulled back
/// through `y_i = f_i * x` by correlation with the image; `E_recons` adds the
/// direct term through the reconstruction kernel, and `E_global_dim`
/// contributes its own filter-space gradient.
pub fn total_energy_and_gradient(
    img: &Image,
    bank: &FilterBank,
    spec: &PatchSpec,
    lambda: f64,
    mu: f64,
) -> Result<(EnergyBreakdown, FilterGradient)> {
    if !(lambda >= 0.0) || !(mu >= 0.0) {
        return Err(Error::invalid(format!(
            "hyperparameters must be >= 0, got lambda={lambda} mu={mu}"
        )));
    }
    let (n, ks) = (bank.num_filters(), bank.kernel_size());
    let responses = apply(bank, img)?;
    let (e_local, g_local) = local_dim_energy(&responses, spec)?;
    let (e_recons, g_recons, residual) = recons_energy_with_residual(img, bank, &responses)?;

    let mut grad = FilterGradient::zeros(n, ks);
    for i in 0..n {
        // Combined response-space gradient for filter i, pulled back to taps.
        let mut resp = g_local.channel(i).clone();
        resp.add_scaled(g_recons.channel(i), lambda);
        let mut taps = tap_correlation(&resp, img, ks)?;
        // E_recons also sees f_i inside the reconstruction f̃_i * y_i.
        let through_recons = tap_correlation(responses.channel(i), &residual, ks)?;
        for (t, s) in taps.taps_mut().iter_mut().zip(through_recons.taps()) {
            *t += -2.0 * lambda * s;
        }
        grad.grads[i] = taps;
    }

    let e_global = if mu > 0.0 {
        let (e_global, g_global) = global_dim_energy(img, bank)?;
        grad.add_scaled(&g_global, mu);
        e_global
    } else {
        0.0
    };

    let breakdown = EnergyBreakdown {
        local_dim: e_local,
        recons: e_recons,
        global_dim: e_global,
        total: e_local + lambda * e_recons + mu * e_global,
        lambda,
        mu,
    };
    Ok((breakdown, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::num_complex::Complex;

    use crate::signal::{ifft2, Spectrum};

    fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
        Image::new(h, w, (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_responses(n: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> ResponseMap {
        ResponseMap::new((0..n).map(|_| random_image(h, w, rng)).collect()).unwrap()
    }

    fn rel_vec_err(fd: &[f64], analytic: &[f64]) -> f64 {
        let num: f64 = fd
            .iter()
            .zip(analytic)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    #[test]
    fn local_dim_zero_responses() {
        let spec = PatchSpec::gaussian(8, 4, 2.0).unwrap();
        let r = ResponseMap::zeros(2, 16, 16);
        let (e, g) = local_dim_energy(&r, &spec).unwrap();
        assert_eq!(e, 0.0);
        for c in g.channels() {
            assert!(c.pixels().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn local_dim_rank_one_single_patch() {
        // One patch covering the map, channel 2 = 2 × channel 1: the stacked
        // matrix is rank one, so the energy is its single singular value
        // √5 · ‖√w ⊙ y₁‖.
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let y1 = random_image(8, 8, &mut rng);
        let y2 = y1.scale(2.0);
        let r = ResponseMap::new(vec![y1.clone(), y2]).unwrap();
        let spec = PatchSpec::gaussian(8, 8, 2.5).unwrap();
        let (e, _) = local_dim_energy(&r, &spec).unwrap();
        let weighted: f64 = y1
            .pixels()
            .iter()
            .zip(spec.weight_window().taps())
            .map(|(v, w)| v * v * w)
            .sum();
        let want = 5.0f64.sqrt() * weighted.sqrt();
        assert!((e - want).abs() < 1e-10 * want);
    }

    #[test]
    fn local_dim_rejects_oversized_patch() {
        let spec = PatchSpec::gaussian(9, 9, 2.0).unwrap();
        let r = ResponseMap::zeros(1, 8, 8);
        assert!(local_dim_energy(&r, &spec).is_err());
    }

    #[test]
    fn local_dim_absolute_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let r = random_responses(3, 16, 16, &mut rng);
        let spec = PatchSpec::gaussian(8, 4, 2.0).unwrap();
        let (e, _) = local_dim_energy(&r, &spec).unwrap();
        for c in [2.0, -3.0, 0.25] {
            let scaled =
                ResponseMap::new(r.channels().iter().map(|ch| ch.scale(c)).collect()).unwrap();
            let (es, _) = local_dim_energy(&scaled, &spec).unwrap();
            assert!((es - c.abs() * e).abs() < 1e-9 * e.abs().max(1.0));
        }
    }

    #[test]
    fn local_dim_gradient_matches_finite_differences() {
        // The spec'd oracle: random 2-filter 24×24 map, 8×8 patches, stride 4.
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let r = random_responses(2, 24, 24, &mut rng);
        let spec = PatchSpec::gaussian(8, 4, 2.0).unwrap();
        let (_, grad) = local_dim_energy(&r, &spec).unwrap();
        let h = 1e-6;
        let mut fd = Vec::new();
        let mut an = Vec::new();
        // Probe a deterministic spread of entries across both channels.
        for i in 0..2 {
            for idx in (0..24 * 24).step_by(23) {
                let mut plus = r.clone();
                plus.channel_mut(i).pixels_mut()[idx] += h;
                let mut minus = r.clone();
                minus.channel_mut(i).pixels_mut()[idx] -= h;
                let (ep, _) = local_dim_energy(&plus, &spec).unwrap();
                let (em, _) = local_dim_energy(&minus, &spec).unwrap();
                fd.push((ep - em) / (2.0 * h));
                an.push(grad.channel(i).pixels()[idx]);
            }
        }
        assert!(rel_vec_err(&fd, &an) < 1e-4, "rel err {}", rel_vec_err(&fd, &an));
    }

    #[test]
    fn local_dim_overlap_accumulation_matches_reference() {
        // Independent scatter loop over the same patch grid.
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let r = random_responses(2, 20, 20, &mut rng);
        let spec = PatchSpec::gaussian(8, 4, 2.0).unwrap();
        let (e, g) = local_dim_energy(&r, &spec).unwrap();

        let p = 8usize;
        let sqrt_w: Vec<f64> = spec.weight_window().taps().iter().map(|v| v.sqrt()).collect();
        let mut e_ref = 0.0;
        let mut g_ref = ResponseMap::zeros(2, 20, 20);
        for r0 in (0..=20 - p).step_by(4) {
            for c0 in (0..=20 - p).step_by(4) {
                let mut m = Matrix::zeros(2, p * p);
                for i in 0..2 {
                    for pr in 0..p {
                        for pc in 0..p {
                            m.set(i, pr * p + pc, r.channel(i).get(r0 + pr, c0 + pc) * sqrt_w[pr * p + pc]);
                        }
                    }
                }
                e_ref += nuclear_norm(&m).unwrap();
                let s = nuclear_norm_subgradient_default(&m).unwrap();
                for i in 0..2 {
                    for pr in 0..p {
                        for pc in 0..p {
                            let v = g_ref.channel(i).get(r0 + pr, c0 + pc)
                                + s.get(i, pr * p + pc) * sqrt_w[pr * p + pc];
                            g_ref.channel_mut(i).set(r0 + pr, c0 + pc, v);
                        }
                    }
                }
            }
        }
        assert!((e - e_ref).abs() < 1e-10 * e_ref);
        for i in 0..2 {
            for (a, b) in g.channel(i).pixels().iter().zip(g_ref.channel(i).pixels()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn recons_zero_responses_gives_image_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let img = random_image(12, 12, &mut rng);
        let bank = FilterBank::random(2, 4, 0.0, 55).unwrap();
        let r = ResponseMap::zeros(2, 12, 12);
        let (e, _) = recons_energy(&img, &bank, &r).unwrap();
        assert!((e - img.dot(&img)).abs() < 1e-12);
    }

    #[test]
    fn recons_perfect_for_identity_bank() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let img = random_image(10, 10, &mut rng);
        let bank = FilterBank::new(vec![Kernel::delta()], 0.0).unwrap();
        let r = apply(&bank, &img).unwrap();
        let (e, g) = recons_energy(&img, &bank, &r).unwrap();
        assert!(e.abs() < 1e-20);
        assert!(g.channel(0).pixels().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn recons_quadratic_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let img = random_image(12, 12, &mut rng);
        let bank = FilterBank::random(2, 4, 0.0, 58).unwrap();
        let r = random_responses(2, 12, 12, &mut rng);
        let (e, _) = recons_energy(&img, &bank, &r).unwrap();
        let c = -1.75;
        let img_c = img.scale(c);
        let r_c = ResponseMap::new(r.channels().iter().map(|ch| ch.scale(c)).collect()).unwrap();
        let (ec, _) = recons_energy(&img_c, &bank, &r_c).unwrap();
        assert!((ec - c * c * e).abs() < 1e-9 * e.max(1.0));
    }

    #[test]
    fn recons_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let img = random_image(12, 12, &mut rng);
        let bank = FilterBank::random(2, 4, 0.0, 60).unwrap();
        let r = random_responses(2, 12, 12, &mut rng);
        let (_, grad) = recons_energy(&img, &bank, &r).unwrap();
        let h = 1e-6;
        let mut fd = Vec::new();
        let mut an = Vec::new();
        for i in 0..2 {
            for idx in (0..144).step_by(11) {
                let mut plus = r.clone();
                plus.channel_mut(i).pixels_mut()[idx] += h;
                let mut minus = r.clone();
                minus.channel_mut(i).pixels_mut()[idx] -= h;
                let (ep, _) = recons_energy(&img, &bank, &plus).unwrap();
                let (em, _) = recons_energy(&img, &bank, &minus).unwrap();
                fd.push((ep - em) / (2.0 * h));
                an.push(grad.channel(i).pixels()[idx]);
            }
        }
        assert!(rel_vec_err(&fd, &an) < 1e-5, "rel err {}", rel_vec_err(&fd, &an));
    }

    #[test]
    fn global_dim_zero_image() {
        let bank = FilterBank::random(2, 4, 1.0, 61).unwrap();
        let (e, g) = global_dim_energy(&Image::zeros(12, 12), &bank).unwrap();
        assert_eq!(e, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn global_dim_single_filter_is_frobenius() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let img = random_image(16, 16, &mut rng);
        let bank = FilterBank::random(1, 5, 1.5, 63).unwrap();
        let (e, _) = global_dim_energy(&img, &bank).unwrap();
        let z = modulated_reconstructions(&bank, &img).unwrap();
        assert!((e + z.channel(0).norm()).abs() < 1e-10 * z.channel(0).norm());
    }

    #[test]
    fn global_dim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let img = random_image(32, 32, &mut rng);
        let bank = FilterBank::random(2, 6, 1.5, 65).unwrap();
        let (_, grad) = global_dim_energy(&img, &bank).unwrap();
        let h = 1e-6;
        let mut fd = Vec::new();
        for i in 0..2 {
            for tap in 0..36 {
                let mut plus = bank.clone();
                let mut k = plus.kernel(i).clone();
                k.taps_mut()[tap] += h;
                plus.set_kernel(i, k).unwrap();
                let mut minus = bank.clone();
                let mut k = minus.kernel(i).clone();
                k.taps_mut()[tap] -= h;
                minus.set_kernel(i, k).unwrap();
                let (ep, _) = global_dim_energy(&img, &plus).unwrap();
                let (em, _) = global_dim_energy(&img, &minus).unwrap();
                fd.push((ep - em) / (2.0 * h));
            }
        }
        let an = grad.flatten();
        assert!(rel_vec_err(&fd, &an) < 1e-4, "rel err {}", rel_vec_err(&fd, &an));
    }

    #[test]
    fn total_reduces_to_local_when_weights_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let img = random_image(24, 24, &mut rng);
        let bank = FilterBank::random(2, 5, 1.0, 67).unwrap();
        let spec = PatchSpec::gaussian(8, 4, 2.0).unwrap();
        let (bd, _) = total_energy_and_gradient(&img, &bank, &spec, 0.0, 0.0).unwrap();
        let (e_local, _) = local_dim_energy(&apply(&bank, &img).unwrap(), &spec).unwrap();
        assert!((bd.total - e_local).abs() < 1e-12 * e_local.max(1.0));
        assert_eq!(bd.global_dim, 0.0);
    }

    #[test]
    fn total_breakdown_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(68);
        let img = random_image(24, 24, &mut rng);
        let bank = FilterBank::random(2, 5, 1.2, 69).unwrap();
        let spec = PatchSpec::gaussian(8, 4, 2.0).unwrap();
        let (bd, grad) = total_energy_and_gradient(&img, &bank, &spec, 3.5, 0.8).unwrap();
        assert!(bd.global_dim < 0.0);
        let want = bd.local_dim + 3.5 * bd.recons + 0.8 * bd.global_dim;
        assert!((bd.total - want).abs() < 1e-12 * want.abs().max(1.0));
        assert!(grad.is_finite());
    }

    #[test]
    fn total_image_scaling_degrees() {
        // E_recons(c·x) with responses recomputed scales by c²; E_local by |c|.
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let img = random_image(24, 24, &mut rng);
        let bank = FilterBank::random(2, 5, 1.0, 71).unwrap();
        let spec = PatchSpec::gaussian(8, 4, 2.0).unwrap();
        let (bd1, _) = total_energy_and_gradient(&img, &bank, &spec, 2.0, 0.5).unwrap();
        let c = -2.5;
        let (bd2, _) = total_energy_and_gradient(&img.scale(c), &bank, &spec, 2.0, 0.5).unwrap();
        assert!((bd2.local_dim - c.abs() * bd1.local_dim).abs() < 1e-8 * bd1.local_dim.max(1.0));
        assert!((bd2.recons - c * c * bd1.recons).abs() < 1e-8 * bd1.recons.max(1.0));
    }

    #[test]
    fn total_gradient_zero_for_zero_image() {
        let bank = FilterBank::random(2, 4, 1.0, 72).unwrap();
        let spec = PatchSpec::gaussian(8, 4, 2.0).unwrap();
        let (bd, grad) = total_energy_and_gradient(&Image::zeros(16, 16), &bank, &spec, 3.0, 1.0).unwrap();
        assert_eq!(bd.total, 0.0);
        assert!(grad.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        // The central oracle of the build: full objective, 2-filter 6×6-kernel
        // bank, 32×32 image, every tap probed by central differences.
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let img = random_image(32, 32, &mut rng);
        let bank = FilterBank::random(2, 6, 1.5, 74).unwrap();
        let spec = PatchSpec::gaussian(8, 4, 2.0).unwrap();
        let (lambda, mu) = (3.0, 0.7);
        let (_, grad) = total_energy_and_gradient(&img, &bank, &spec, lambda, mu).unwrap();
        let h = 1e-5;
        let mut fd = Vec::new();
        for i in 0..2 {
            for tap in 0..36 {
                let mut plus = bank.clone();
                let mut k = plus.kernel(i).clone();
                k.taps_mut()[tap] += h;
                plus.set_kernel(i, k).unwrap();
                let mut minus = bank.clone();
                let mut k = minus.kernel(i).clone();
                k.taps_mut()[tap] -= h;
                minus.set_kernel(i, k).unwrap();
                let (ep, _) = total_energy_and_gradient(&img, &plus, &spec, lambda, mu).unwrap();
                let (em, _) = total_energy_and_gradient(&img, &minus, &spec, lambda, mu).unwrap();
                fd.push((ep.total - em.total) / (2.0 * h));
            }
        }
        let an = grad.flatten();
        assert!(rel_vec_err(&fd, &an) < 1e-4, "rel err {}", rel_vec_err(&fd, &an));
    }

    /// Build a real kernel from a frequency-domain magnitude/phase spec.
    fn kernel_from_spectrum(size: usize, bins: Vec<Complex<f64>>) -> Kernel {
        let img = ifft2(&Spectrum::from_parts(size, size, bins).unwrap());
        Kernel::new(size, img.pixels().to_vec()).unwrap()
    }

    #[test]
    fn quadrature_pair_degeneracy_penalized_by_global_term() {
        // Two filters with identical Fourier magnitudes but a 90° phase shift
        // have diagonal response covariance, yet the global term must still
        // penalize them relative to magnitude-disjoint filters of equal
        // modulated energy.
        let n = 16usize;
        let mut rng = ChaCha8Rng::seed_from_u64(75);
        let img = random_image(n, n, &mut rng);

        // Shared magnitude mask on non-self-conjugate bins, Hermitian pairs.
        let herm = |f: &dyn Fn(usize, usize) -> Complex<f64>| -> Vec<Complex<f64>> {
            let mut bins = vec![Complex::new(0.0, 0.0); n * n];
            for r in 0..n {
                for c in 0..n {
                    if (r == 0 || 2 * r == n) && (c == 0 || 2 * c == n) {
                        continue; // keep self-conjugate bins zero
                    }
                    bins[r * n + c] = f(r, c);
                }
            }
            bins
        };
        // Frequency-ordering helper: canonical representative below Nyquist.
        let low = |r: usize, c: usize| -> bool {
            let fr = if r <= n / 2 { r } else { n - r };
            let fc = if c <= n / 2 { c } else { n - c };
            fr + fc <= 4
        };
        let sign = |r: usize, c: usize| -> f64 {
            // Odd under (r,c) → (−r,−c): pick the half-plane sign.
            let rr = if r == 0 { 0 } else if r <= n / 2 { 1 } else { -1 };
            if rr != 0 {
                rr as f64
            } else if c == 0 {
                0.0
            } else if c <= n / 2 {
                1.0
            } else {
                -1.0
            }
        };
        let mag = |r: usize, c: usize| -> f64 {
            if low(r, c) {
                1.0
            } else {
                0.0
            }
        };
        let f1 = kernel_from_spectrum(n, herm(&|r, c| Complex::new(mag(r, c), 0.0)));
        let f2 = kernel_from_spectrum(n, herm(&|r, c| Complex::new(0.0, sign(r, c) * mag(r, c))));
        let quad = FilterBank::new(vec![f1, f2], 0.0).unwrap();

        // Quadrature responses are uncorrelated: Cov[y] is diagonal.
        let resp = apply(&quad, &img).unwrap();
        let cross = resp.channel(0).dot(resp.channel(1));
        let scale = resp.channel(0).norm() * resp.channel(1).norm();
        assert!(cross.abs() < 1e-8 * scale, "quadrature responses correlated");

        // Magnitude-disjoint pair: split the same band support in two.
        let mag_a = |r: usize, c: usize| -> f64 {
            let fr = if r <= n / 2 { r } else { n - r };
            let fc = if c <= n / 2 { c } else { n - c };
            if fr + fc <= 2 { 1.0 } else { 0.0 }
        };
        let mag_b = |r: usize, c: usize| -> f64 {
            let fr = if r <= n / 2 { r } else { n - r };
            let fc = if c <= n / 2 { c } else { n - c };
            if fr + fc > 2 && fr + fc <= 4 { 1.0 } else { 0.0 }
        };
        let fa = kernel_from_spectrum(n, herm(&|r, c| Complex::new(mag_a(r, c), 0.0)));
        let fb = kernel_from_spectrum(n, herm(&|r, c| Complex::new(mag_b(r, c), 0.0)));
        let disjoint = FilterBank::new(vec![fa, fb], 0.0).unwrap();

        // Match total modulated energy (Frobenius norm of Z̃) exactly, then
        // compare nuclear norms. z̃ scales quadratically in the taps.
        let frob = |bank: &FilterBank| -> f64 {
            let z = modulated_reconstructions(bank, &img).unwrap();
            z.channels().iter().map(|ch| ch.dot(ch)).sum::<f64>().sqrt()
        };
        let c = (frob(&quad) / frob(&disjoint)).sqrt();
        let scaled = FilterBank::new(
            disjoint
                .kernels()
                .iter()
                .map(|k| Kernel::new(n, k.taps().iter().map(|t| t * c).collect()).unwrap())
                .collect(),
            0.0,
        )
        .unwrap();
        assert!((frob(&quad) - frob(&scaled)).abs() < 1e-8 * frob(&quad));

        let (e_quad, _) = global_dim_energy(&img, &quad).unwrap();
        let (e_disj, _) = global_dim_energy(&img, &scaled).unwrap();
        assert!(
            e_quad > e_disj + 1e-6 * e_disj.abs(),
            "quadrature pair not penalized: quad {e_quad}, disjoint {e_disj}"
        );
    }

    #[test]
    fn patch_spec_validates() {
        assert!(PatchSpec::gaussian(0, 1, 2.0).is_err());
        assert!(PatchSpec::gaussian(8, 0, 2.0).is_err());
        assert!(PatchSpec::gaussian(8, 9, 2.0).is_err());
        assert!(PatchSpec::gaussian(8, 4, 0.0).is_err());
        let w = Kernel::new(4, vec![1.0; 16]).unwrap();
        assert!(PatchSpec::with_window(8, 4, w).is_err());
    }

    #[test]
    fn patch_grid_drops_partials() {
        let spec = PatchSpec::gaussian(8, 4, 2.0).unwrap();
        let grid = spec.grid(20, 16);
        // Rows: 0,4,8,12 (16 would overflow 20−8); cols: 0,4,8.
        assert_eq!(grid.len(), 4 * 3);
        assert!(grid.contains(&(12, 8)));
        assert!(!grid.iter().any(|&(r, c)| r + 8 > 20 || c + 8 > 16));
    }
}
