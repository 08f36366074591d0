//! Filter-bank application, transposed reconstruction, and the modulated
//! reconstructions feeding the global-dimensionality term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::signal::{
    adjoint_convolve, convolve, fft2, gaussian_window, ifft2, kernel_to_image, Image, Kernel,
    Spectrum,
};

/// A bank of same-sized convolution kernels plus the blur window `h` used by
/// the modulated reconstructions. Immutable after construction.
#[derive(Debug, Clone)]
pub struct FilterBank {
    kernels: Vec<Kernel>,
    blur_sigma: f64,
    blur: Kernel,
}

/// Where the blur window `h` acts when forming modulated reconstructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModulationPath {
    /// Tap-wise windowing of each kernel by `h` before convolving (canonical).
    #[default]
    SpatialWindow,
    /// Blur each filter's Fourier magnitude directly on the frequency grid.
    /// Forward evaluation only; training always uses the spatial path.
    FourierMagnitude,
}

impl FilterBank {
    /// Build a bank from kernels and a blur width. `blur_sigma = 0` disables
    /// the window (a degenerate delta blur); otherwise `h` is a normalized
    /// Gaussian the same size as the kernels.
    pub fn new(kernels: Vec<Kernel>, blur_sigma: f64) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::invalid("filter bank needs at least one kernel"));
        }
        let size = kernels[0].size();
        for (i, k) in kernels.iter().enumerate() {
            if k.size() != size {
                return Err(Error::invalid(format!(
                    "kernel {i} is {}x{}, expected {size}x{size}",
                    k.size(),
                    k.size()
                )));
            }
            if !k.is_finite() {
                return Err(Error::invalid(format!("kernel {i} has non-finite taps")));
            }
        }
        if !blur_sigma.is_finite() || blur_sigma < 0.0 {
            return Err(Error::invalid(format!(
                "blur sigma must be finite and >= 0, got {blur_sigma}"
            )));
        }
        let blur = if blur_sigma == 0.0 {
            Kernel::delta()
        } else {
            gaussian_window(size, blur_sigma)?
        };
        Ok(FilterBank {
            kernels,
            blur_sigma,
            blur,
        })
    }

    /// Random bank with independent standard-normal taps, each kernel
    /// normalized to unit L2 norm. Deterministic for a fixed seed.
    pub fn random(num_filters: usize, kernel_size: usize, blur_sigma: f64, seed: u64) -> Result<Self> {
        if num_filters == 0 || kernel_size == 0 {
            return Err(Error::invalid("bank dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kernels = Vec::with_capacity(num_filters);
        for _ in 0..num_filters {
            // Box-Muller on uniform draws keeps the dependency surface small.
            let mut taps = Vec::with_capacity(kernel_size * kernel_size);
            while taps.len() < kernel_size * kernel_size {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = (-2.0 * u1.ln()).sqrt();
                taps.push(r * u2.cos());
                if taps.len() < kernel_size * kernel_size {
                    taps.push(r * u2.sin());
                }
            }
            let norm = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for t in &mut taps {
                    *t /= norm;
                }
            }
            kernels.push(Kernel::new(kernel_size, taps)?);
        }
        FilterBank::new(kernels, blur_sigma)
    }

    pub fn num_filters(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels[0].size()
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn kernel(&self, i: usize) -> &Kernel {
        &self.kernels[i]
    }

    /// Replace kernel `i`; the new kernel must match the bank size.
    pub fn set_kernel(&mut self, i: usize, k: Kernel) -> Result<()> {
        if k.size() != self.kernel_size() {
            return Err(Error::invalid("replacement kernel size mismatch"));
        }
        self.kernels[i] = k;
        Ok(())
    }

    pub fn blur_sigma(&self) -> f64 {
        self.blur_sigma
    }

    /// The blur window `h` (a 1x1 delta when `blur_sigma` is zero).
    pub fn blur(&self) -> &Kernel {
        &self.blur
    }

    /// Tap-wise windowed kernel `g_i = h ⊙ f_i` (just `f_i` for a delta blur).
    pub fn windowed_kernel(&self, i: usize) -> Result<Kernel> {
        if self.blur_sigma == 0.0 {
            Ok(self.kernels[i].clone())
        } else {
            self.kernels[i].windowed(&self.blur)
        }
    }
}

/// Per-filter response images over a common grid.
#[derive(Debug, Clone)]
pub struct ResponseMap {
    channels: Vec<Image>,
}

impl ResponseMap {
    pub fn new(channels: Vec<Image>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("response map needs at least one channel"));
        }
        let (h, w) = (channels[0].height(), channels[0].width());
        for (i, c) in channels.iter().enumerate() {
            if c.height() != h || c.width() != w {
                return Err(Error::invalid(format!(
                    "channel {i} is {}x{}, expected {h}x{w}",
                    c.height(),
                    c.width()
                )));
            }
            if !c.is_finite() {
                return Err(Error::invalid(format!("channel {i} has non-finite values")));
            }
        }
        Ok(ResponseMap { channels })
    }

    pub fn zeros(num_channels: usize, height: usize, width: usize) -> Self {
        ResponseMap {
            channels: vec![Image::zeros(height, width); num_channels],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn channel(&self, i: usize) -> &Image {
        &self.channels[i]
    }

    pub fn channel_mut(&mut self, i: usize) -> &mut Image {
        &mut self.channels[i]
    }

    pub fn channels(&self) -> &[Image] {
        &self.channels
    }

    pub fn dot(&self, other: &ResponseMap) -> f64 {
        self.channels
            .iter()
            .zip(&other.channels)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.channels.iter().all(Image::is_finite)
    }
}

fn check_image_fits(bank: &FilterBank, img: &Image) -> Result<()> {
    if bank.kernel_size() > img.height() || bank.kernel_size() > img.width() {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than kernels {}x{}",
            img.height(),
            img.width(),
            bank.kernel_size(),
            bank.kernel_size()
        )));
    }
    Ok(())
}

/// Filter responses `y_i = f_i * x` (circular).
pub fn apply(bank: &FilterBank, img: &Image) -> Result<ResponseMap> {
    check_image_fits(bank, img)?;
    let channels = bank
        .kernels()
        .iter()
        .map(|k| convolve(img, k))
        .collect::<Result<Vec<_>>>()?;
    ResponseMap::new(channels)
}

/// Transposed reconstruction `Σ_i f̃_i * y_i`; the exact adjoint of [`apply`].
pub fn reconstruct(bank: &FilterBank, r: &ResponseMap) -> Result<Image> {
    if r.num_channels() != bank.num_filters() {
        return Err(Error::invalid(format!(
            "response map has {} channels, bank has {} filters",
            r.num_channels(),
            bank.num_filters()
        )));
    }
    let mut out = Image::zeros(r.height(), r.width());
    for (k, y) in bank.kernels().iter().zip(r.channels()) {
        out.add_scaled(&adjoint_convolve(y, k)?, 1.0);
    }
    Ok(out)
}

/// Modulated reconstructions `z̃_i = (h f̃_i) * (h f_i) * x`: each channel is
/// the image filtered forward and back through the windowed kernel `g_i`, so
/// its transfer function is the non-negative `|ĝ_i|²`.
pub fn modulated_reconstructions(bank: &FilterBank, img: &Image) -> Result<ResponseMap> {
    modulated_reconstructions_with(bank, img, ModulationPath::SpatialWindow)
}

/// [`modulated_reconstructions`] with an explicit blur interpretation.
pub fn modulated_reconstructions_with(
    bank: &FilterBank,
    img: &Image,
    path: ModulationPath,
) -> Result<ResponseMap> {
    check_image_fits(bank, img)?;
    match path {
        ModulationPath::SpatialWindow => {
            let mut channels = Vec::with_capacity(bank.num_filters());
            for i in 0..bank.num_filters() {
                let g = bank.windowed_kernel(i)?;
                channels.push(adjoint_convolve(&convolve(img, &g)?, &g)?);
            }
            ResponseMap::new(channels)
        }
        ModulationPath::FourierMagnitude => {
            let spec = fft2(img);
            let mut channels = Vec::with_capacity(bank.num_filters());
            for k in bank.kernels() {
                let kspec = fft2(&kernel_to_image(k, img.height(), img.width())?);
                let mut mag = Image::new(
                    img.height(),
                    img.width(),
                    kspec.bins().iter().map(|b| b.norm()).collect(),
                )?;
                if bank.blur_sigma() > 0.0 {
                    // Blur the magnitude on the (periodic) frequency grid with
                    // the same Gaussian profile the spatial path windows with.
                    mag = convolve(&mag, bank.blur())?;
                }
                let bins: Vec<_> = spec
                    .bins()
                    .iter()
                    .zip(mag.pixels())
                    .map(|(b, m)| b * (m * m))
                    .collect();
                channels.push(ifft2(&Spectrum::from_parts(
                    img.height(),
                    img.width(),
                    bins,
                )?));
            }
            ResponseMap::new(channels)
        }
    }
}
