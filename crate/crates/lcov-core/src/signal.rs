//! 2-D circular convolution, FFT, window generation, and phase randomization.
//!
//! Conventions fixed here and relied on everywhere else:
//! * Convolution is circular (periodic) in both axes.
//! * Kernels are anchored at the center tap `floor(K/2)` in each axis.
//! * The forward FFT is unnormalized; the inverse carries the `1/(H*W)`
//!   factor, so Parseval reads `sum |pixels|^2 = (1/(H*W)) * sum |bins|^2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// 2-D real-valued luminance grid.
#[derive(Debug, Clone)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    /// Source path or preprocessing note, carried for logging only.
    pub provenance: Option<String>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "image {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Image {
            height,
            width,
            pixels,
            provenance: None,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            pixels: vec![0.0; height * width],
            provenance: None,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.pixels[r * self.width + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.pixels.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn scale(&self, c: f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|v| c * v).collect(),
            provenance: None,
        }
    }

    /// `self += c * other`; shapes must match.
    pub fn add_scaled(&mut self, other: &Image, c: f64) {
        assert_eq!(self.pixels.len(), other.pixels.len(), "image shape mismatch");
        for (a, b) in self.pixels.iter_mut().zip(&other.pixels) {
            *a += c * b;
        }
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.pixels.iter().zip(&other.pixels).map(|(a, b)| a * b).sum()
    }

    /// Crop a `size x size` window with top-left corner at (r0, c0).
    pub fn crop(&self, r0: usize, c0: usize, size: usize) -> Result<Image> {
        if r0 + size > self.height || c0 + size > self.width {
            return Err(Error::invalid(format!(
                "crop {size}x{size} at ({r0},{c0}) exceeds image {}x{}",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(size * size);
        for r in r0..r0 + size {
            pixels.extend_from_slice(&self.pixels[r * self.width + c0..r * self.width + c0 + size]);
        }
        Image::new(size, size, pixels)
    }
}

/// Square convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("kernel size must be >= 1"));
        }
        if taps.len() != size * size {
            return Err(Error::invalid(format!(
                "kernel size {size} needs {} taps, got {}",
                size * size,
                taps.len()
            )));
        }
        Ok(Kernel { size, taps })
    }

    /// The 1x1 identity kernel.
    pub fn delta() -> Kernel {
        Kernel {
            size: 1,
            taps: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.taps[r * self.size + c]
    }

    /// Spatially reversed kernel `k(-t)`.
    pub fn reversed(&self) -> Kernel {
        let n = self.size;
        let mut taps = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                taps[(n - 1 - r) * n + (n - 1 - c)] = self.taps[r * n + c];
            }
        }
        Kernel { size: n, taps }
    }

    /// Tap-wise product with a window of the same size.
    pub fn windowed(&self, window: &Kernel) -> Result<Kernel> {
        if window.size != self.size {
            return Err(Error::invalid(format!(
                "window size {} does not match kernel size {}",
                window.size, self.size
            )));
        }
        let taps = self
            .taps
            .iter()
            .zip(&window.taps)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Kernel {
            size: self.size,
            taps,
        })
    }

    pub fn norm(&self) -> f64 {
        self.taps.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.taps.iter().all(|v| v.is_finite())
    }
}

/// Complex frequency grid of an image-sized transform.
#[derive(Debug, Clone)]
pub struct Spectrum {
    height: usize,
    width: usize,
    bins: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn from_parts(height: usize, width: usize, bins: Vec<Complex<f64>>) -> Result<Self> {
        if height == 0 || width == 0 || bins.len() != height * width {
            return Err(Error::invalid("spectrum dimensions do not match bin count"));
        }
        Ok(Spectrum {
            height,
            width,
            bins,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bins(&self) -> &[Complex<f64>] {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut [Complex<f64>] {
        &mut self.bins
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex<f64> {
        self.bins[r * self.width + c]
    }

    /// Squared magnitude per bin.
    pub fn power(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.norm_sqr()).collect()
    }
}

fn fft2_inner(height: usize, width: usize, mut buf: Vec<Complex<f64>>, inverse: bool) -> Vec<Complex<f64>> {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(width)
    } else {
        planner.plan_fft_forward(width)
    };
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(height)
    } else {
        planner.plan_fft_forward(height)
    };
    let mut col = vec![Complex::default(); height];
    for c in 0..width {
        for r in 0..height {
            col[r] = buf[r * width + c];
        }
        col_fft.process(&mut col);
        for r in 0..height {
            buf[r * width + c] = col[r];
        }
    }
    buf
}

/// Unnormalized forward 2-D FFT.
pub fn fft2(img: &Image) -> Spectrum {
    let buf: Vec<Complex<f64>> = img.pixels.iter().map(|&v| Complex::new(v, 0.0)).collect();
    Spectrum {
        height: img.height,
        width: img.width,
        bins: fft2_inner(img.height, img.width, buf, false),
    }
}

/// Inverse 2-D FFT with the `1/(H*W)` normalization; returns the real part.
pub fn ifft2(s: &Spectrum) -> Image {
    let buf = fft2_inner(s.height, s.width, s.bins.clone(), true);
    let scale = 1.0 / (s.height * s.width) as f64;
    Image {
        height: s.height,
        width: s.width,
        pixels: buf.iter().map(|b| b.re * scale).collect(),
        provenance: None,
    }
}

fn check_kernel_fits(img: &Image, k: &Kernel) -> Result<()> {
    if k.size > img.height || k.size > img.width {
        return Err(Error::invalid(format!(
            "kernel {0}x{0} larger than image {1}x{2}",
            k.size, img.height, img.width
        )));
    }
    Ok(())
}

fn wrap_tables(dim: usize, ksize: usize, center: isize, sign: isize) -> Vec<Vec<usize>> {
    (0..ksize)
        .map(|a| {
            let off = sign * (center - a as isize);
            (0..dim)
                .map(|t| (t as isize + off).rem_euclid(dim as isize) as usize)
                .collect()
        })
        .collect()
}

fn conv_impl(img: &Image, k: &Kernel, sign: isize) -> Image {
    let (h, w, ks) = (img.height, img.width, k.size);
    let center = (ks / 2) as isize;
    let rows = wrap_tables(h, ks, center, sign);
    let cols = wrap_tables(w, ks, center, sign);
    let mut out = vec![0.0; h * w];
    for tr in 0..h {
        for ar in 0..ks {
            let src_row = rows[ar][tr] * w;
            let tap_row = &k.taps[ar * ks..(ar + 1) * ks];
            let dst = &mut out[tr * w..(tr + 1) * w];
            for (ac, &tap) in tap_row.iter().enumerate() {
                if tap == 0.0 {
                    continue;
                }
                let cmap = &cols[ac];
                for tc in 0..w {
                    dst[tc] += tap * img.pixels[src_row + cmap[tc]];
                }
            }
        }
    }
    Image {
        height: h,
        width: w,
        pixels: out,
        provenance: None,
    }
}

/// Circular convolution `(k * img)(t) = sum_a k(a) img(t + c - a)` with the
/// kernel anchored at its center tap `c = floor(K/2)`.
pub fn convolve(img: &Image, k: &Kernel) -> Result<Image> {
    check_kernel_fits(img, k)?;
    Ok(conv_impl(img, k, 1))
}

/// Adjoint of [`convolve`] in the image argument: correlation with the kernel,
/// equal to convolution with the spatially reversed kernel. Satisfies
/// `<convolve(x,k), y> = <x, adjoint_convolve(y,k)>` exactly in exact
/// arithmetic.
pub fn adjoint_convolve(img: &Image, k: &Kernel) -> Result<Image> {
    check_kernel_fits(img, k)?;
    Ok(conv_impl(img, k, -1))
}

/// Correlation of a response-space map with the image, restricted to the
/// `K x K` tap support: `out(tau) = sum_t g(t) x(t + c - tau)`. This is the
/// pull-back of a response gradient onto filter taps.
pub fn tap_correlation(g: &Image, x: &Image, kernel_size: usize) -> Result<Kernel> {
    if g.height != x.height || g.width != x.width {
        return Err(Error::invalid("tap_correlation: shape mismatch"));
    }
    if kernel_size > x.height || kernel_size > x.width {
        return Err(Error::invalid("tap_correlation: kernel larger than image"));
    }
    let (h, w, ks) = (x.height, x.width, kernel_size);
    let center = (ks / 2) as isize;
    let mut taps = vec![0.0; ks * ks];
    // out(tau) = sum_t g(t) x(t + c - tau): same wrap table as convolve, with
    // the roles of tap index and output swapped.
    let rows = wrap_tables(h, ks, center, 1);
    let cols = wrap_tables(w, ks, center, 1);
    for tau_r in 0..ks {
        for tau_c in 0..ks {
            let rmap = &rows[tau_r];
            let cmap = &cols[tau_c];
            let mut acc = 0.0;
            for tr in 0..h {
                let grow = &g.pixels[tr * w..(tr + 1) * w];
                let xrow = rmap[tr] * w;
                for tc in 0..w {
                    acc += grow[tc] * x.pixels[xrow + cmap[tc]];
                }
            }
            taps[tau_r * ks + tau_c] = acc;
        }
    }
    Kernel::new(ks, taps)
}

/// Embed a kernel into an `h x w` grid with the anchor tap at the origin, so
/// that FFT-multiplication reproduces [`convolve`].
pub fn kernel_to_image(k: &Kernel, height: usize, width: usize) -> Result<Image> {
    if k.size > height || k.size > width {
        return Err(Error::invalid("kernel larger than target grid"));
    }
    let c = (k.size / 2) as isize;
    let mut img = Image::zeros(height, width);
    for ar in 0..k.size {
        for ac in 0..k.size {
            let r = (ar as isize - c).rem_euclid(height as isize) as usize;
            let col = (ac as isize - c).rem_euclid(width as isize) as usize;
            img.pixels[r * width + col] = k.taps[ar * k.size + ac];
        }
    }
    Ok(img)
}

/// FFT-path circular convolution; numerically equivalent to [`convolve`].
pub fn convolve_fft(img: &Image, k: &Kernel) -> Result<Image> {
    check_kernel_fits(img, k)?;
    let kimg = kernel_to_image(k, img.height, img.width)?;
    let a = fft2(img);
    let b = fft2(&kimg);
    let bins: Vec<Complex<f64>> = a.bins.iter().zip(&b.bins).map(|(x, y)| x * y).collect();
    Ok(ifft2(&Spectrum {
        height: img.height,
        width: img.width,
        bins,
    }))
}

/// Normalized Gaussian window: non-negative taps peaking at the center,
/// summing to 1. The center is `(size-1)/2` in each axis, so even sizes get a
/// symmetric four-tap peak.
pub fn gaussian_window(size: usize, sigma: f64) -> Result<Kernel> {
    if size == 0 {
        return Err(Error::invalid("gaussian_window: size must be >= 1"));
    }
    if sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "gaussian_window: sigma must be > 0, got {sigma}"
        )));
    }
    let c = (size as f64 - 1.0) / 2.0;
    let mut taps = Vec::with_capacity(size * size);
    for r in 0..size {
        for col in 0..size {
            let dr = r as f64 - c;
            let dc = col as f64 - c;
            taps.push((-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    Kernel::new(size, taps)
}

/// Self-conjugate bins of a real transform (DC and Nyquist combinations).
fn is_self_conjugate(r: usize, c: usize, h: usize, w: usize) -> bool {
    (r == 0 || 2 * r == h) && (c == 0 || 2 * c == w)
}

fn phase_randomize_grid(height: usize, width: usize, pixels: &[f64], seed: u64) -> Vec<f64> {
    let img = Image {
        height,
        width,
        pixels: pixels.to_vec(),
        provenance: None,
    };
    let spec = fft2(&img);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bins = vec![Complex::new(0.0, 0.0); height * width];
    let mut assigned = vec![false; height * width];
    for r in 0..height {
        for c in 0..width {
            let idx = r * width + c;
            if assigned[idx] {
                continue;
            }
            if is_self_conjugate(r, c, height, width) {
                // Hermitian symmetry pins these to the real axis; keep them
                // exactly so the DC (mean) is untouched.
                bins[idx] = spec.bins[idx];
                assigned[idx] = true;
                continue;
            }
            let pr = (height - r) % height;
            let pc = (width - c) % width;
            let pidx = pr * width + pc;
            let mag = spec.bins[idx].norm();
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let val = Complex::from_polar(mag, theta);
            bins[idx] = val;
            bins[pidx] = val.conj();
            assigned[idx] = true;
            assigned[pidx] = true;
        }
    }
    ifft2(&Spectrum {
        height,
        width,
        bins,
    })
    .pixels
}

/// Replace the Fourier phases of an image with uniform random phases while
/// keeping every magnitude, producing spectrally matched noise. Deterministic
/// for a fixed seed.
pub fn phase_randomize(img: &Image, seed: u64) -> Image {
    Image {
        height: img.height,
        width: img.width,
        pixels: phase_randomize_grid(img.height, img.width, &img.pixels, seed),
        provenance: None,
    }
}

/// [`phase_randomize`] applied to a kernel's tap grid.
pub fn phase_randomize_kernel(k: &Kernel, seed: u64) -> Kernel {
    Kernel {
        size: k.size,
        taps: phase_randomize_grid(k.size, k.size, &k.taps, seed),
    }
}

/// Phase-randomize two same-size kernels with one shared random all-pass
/// field: each spectrum is multiplied by the same unit-modulus `e^{iφ(ω)}`.
///
/// Individually each output is an ordinary phase randomization, but because
/// the field is shared the cross-spectrum `f̂₁·conj(f̂₂)` — and with it every
/// second-order relation between the pair, orthogonality included — is
/// preserved exactly. Randomizing the two filters independently would
/// instead hand them a spurious overlap that correlates their responses on
/// any input.
pub fn phase_randomize_pair(a: &Kernel, b: &Kernel, seed: u64) -> Result<(Kernel, Kernel)> {
    if a.size != b.size {
        return Err(Error::invalid("paired kernels must share a size"));
    }
    let n = a.size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = vec![Complex::new(1.0, 0.0); n * n];
    let mut assigned = vec![false; n * n];
    for r in 0..n {
        for c in 0..n {
            let idx = r * n + c;
            if assigned[idx] || is_self_conjugate(r, c, n, n) {
                assigned[idx] = true;
                continue; // unit factor keeps those bins (and realness) intact
            }
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let pidx = ((n - r) % n) * n + (n - c) % n;
            field[idx] = Complex::from_polar(1.0, theta);
            field[pidx] = field[idx].conj();
            assigned[idx] = true;
            assigned[pidx] = true;
        }
    }
    let shift = |k: &Kernel| -> Kernel {
        let img = Image {
            height: n,
            width: n,
            pixels: k.taps.clone(),
            provenance: None,
        };
        let mut spec = fft2(&img);
        for (bin, f) in spec.bins.iter_mut().zip(&field) {
            *bin *= f;
        }
        Kernel {
            size: n,
            taps: ifft2(&spec).pixels,
        }
    };
    Ok((shift(a), shift(b)))
}
