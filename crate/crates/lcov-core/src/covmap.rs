//! Local covariance maps φ(x): extraction over a subsampled grid of
//! neighborhoods, measurement counting, the eigenvalue manipulations used for
//! editing, and the variance-map restriction used as a control.

use crate::error::{Error, Result};
use crate::filterbank::ResponseMap;
use crate::linalg::{eig_sym, Matrix};
use crate::signal::{gaussian_window, Kernel};

/// Weighting applied inside each covariance neighborhood, in serializable
/// form. `Custom` covers caller-supplied kernels that have no compact
/// descriptor and therefore cannot be written to a covariance-map file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovWindow {
    /// Uniform weights summing to 1.
    Boxcar,
    /// Normalized Gaussian of the given width.
    Gaussian { sigma: f64 },
    /// Caller-supplied kernel; not serializable.
    Custom,
}

impl CovWindow {
    /// Default window: Gaussian with `sigma = neighborhood / 4`.
    pub fn default_for(neighborhood: usize) -> CovWindow {
        CovWindow::Gaussian {
            sigma: neighborhood as f64 / 4.0,
        }
    }

    /// Materialize the weight kernel at the given neighborhood size.
    pub fn kernel(&self, size: usize) -> Result<Kernel> {
        match self {
            CovWindow::Boxcar => {
                Kernel::new(size, vec![1.0 / (size * size) as f64; size * size])
            }
            CovWindow::Gaussian { sigma } => gaussian_window(size, *sigma),
            CovWindow::Custom => Err(Error::invalid(
                "custom covariance window has no canonical kernel",
            )),
        }
    }
}

/// Grid of weighted second-moment matrices of filter responses.
///
/// Neighborhoods wrap circularly (consistent with circular convolution), so
/// the grid has exactly `ceil(H/stride) × ceil(W/stride)` locations — the
/// arithmetic behind the measurement counts.
#[derive(Debug, Clone)]
pub struct CovarianceMap {
    grid_height: usize,
    grid_width: usize,
    num_filters: usize,
    neighborhood: usize,
    stride: usize,
    window: CovWindow,
    diagonal_only: bool,
    mats: Vec<Matrix>,
}

/// Measurement accounting for a covariance map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementCount {
    pub locations: usize,
    pub entries_per_matrix: usize,
    pub total: usize,
}

fn grid_len(dim: usize, stride: usize) -> usize {
    dim.div_ceil(stride)
}

impl CovarianceMap {
    /// Assemble a map from explicit matrices (used by deserialization and
    /// editing). Every matrix must be N×N and symmetric to 1e-12.
    #[allow(clippy::too_many_arguments)]
    pub fn from_matrices(
        grid_height: usize,
        grid_width: usize,
        num_filters: usize,
        neighborhood: usize,
        stride: usize,
        window: CovWindow,
        diagonal_only: bool,
        mats: Vec<Matrix>,
    ) -> Result<Self> {
        if grid_height == 0 || grid_width == 0 || num_filters == 0 {
            return Err(Error::invalid("covariance map dimensions must be positive"));
        }
        if neighborhood == 0 || stride == 0 {
            return Err(Error::invalid("neighborhood and stride must be >= 1"));
        }
        if mats.len() != grid_height * grid_width {
            return Err(Error::invalid(format!(
                "expected {} matrices, got {}",
                grid_height * grid_width,
                mats.len()
            )));
        }
        for (i, m) in mats.iter().enumerate() {
            if m.rows() != num_filters || m.cols() != num_filters {
                return Err(Error::invalid(format!(
                    "matrix {i} is {}x{}, expected {num_filters}x{num_filters}",
                    m.rows(),
                    m.cols()
                )));
            }
            if !m.is_finite() {
                return Err(Error::invalid(format!("matrix {i} has non-finite entries")));
            }
            for r in 0..num_filters {
                for c in r + 1..num_filters {
                    if (m.get(r, c) - m.get(c, r)).abs() > 1e-12 * m.max_abs().max(1.0) {
                        return Err(Error::invalid(format!("matrix {i} is not symmetric")));
                    }
                    if diagonal_only && m.get(r, c) != 0.0 {
                        return Err(Error::invalid(format!(
                            "matrix {i} has off-diagonal entries in a diagonal-only map"
                        )));
                    }
                }
            }
        }
        Ok(CovarianceMap {
            grid_height,
            grid_width,
            num_filters,
            neighborhood,
            stride,
            window,
            diagonal_only,
            mats,
        })
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    pub fn neighborhood(&self) -> usize {
        self.neighborhood
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn window(&self) -> CovWindow {
        self.window
    }

    pub fn diagonal_only(&self) -> bool {
        self.diagonal_only
    }

    pub fn matrix(&self, gi: usize, gj: usize) -> &Matrix {
        &self.mats[gi * self.grid_width + gj]
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.mats
    }

    /// Top-left pixel of the neighborhood at grid position (gi, gj).
    pub fn location(&self, gi: usize, gj: usize) -> (usize, usize) {
        (gi * self.stride, gj * self.stride)
    }

    /// True when two maps are comparable entry-for-entry.
    pub fn same_geometry(&self, other: &CovarianceMap) -> bool {
        self.grid_height == other.grid_height
            && self.grid_width == other.grid_width
            && self.num_filters == other.num_filters
            && self.neighborhood == other.neighborhood
            && self.stride == other.stride
            && self.diagonal_only == other.diagonal_only
    }

    /// Measurement count: unique entries per matrix are the upper triangle
    /// N(N+1)/2, or just the N diagonals for a variance-restricted map.
    pub fn count_measurements(&self) -> MeasurementCount {
        let n = self.num_filters;
        let locations = self.grid_height * self.grid_width;
        let entries_per_matrix = if self.diagonal_only {
            n
        } else {
            n * (n + 1) / 2
        };
        MeasurementCount {
            locations,
            entries_per_matrix,
            total: locations * entries_per_matrix,
        }
    }

    fn map_matrices(&self, f: impl Fn(&Matrix) -> Result<Matrix>) -> Result<CovarianceMap> {
        let mats = self.mats.iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(CovarianceMap {
            mats,
            window: self.window,
            ..*self
        })
    }
}

/// Extract the covariance map of a response map:
/// `C_P[i,j] = Σ_{t∈P} w(t) y_i(t) y_j(t)` per neighborhood `P`, with the
/// grid striding uniformly from (0,0) and neighborhoods wrapping circularly.
pub fn extract(
    r: &ResponseMap,
    neighborhood: usize,
    stride: usize,
    window: &Kernel,
) -> Result<CovarianceMap> {
    extract_with_descriptor(r, neighborhood, stride, window, CovWindow::Custom)
}

/// [`extract`] with a standard window built from its descriptor.
pub fn extract_standard(
    r: &ResponseMap,
    neighborhood: usize,
    stride: usize,
    window: CovWindow,
) -> Result<CovarianceMap> {
    let kernel = window.kernel(neighborhood)?;
    extract_with_descriptor(r, neighborhood, stride, &kernel, window)
}

fn extract_with_descriptor(
    r: &ResponseMap,
    neighborhood: usize,
    stride: usize,
    window: &Kernel,
    descriptor: CovWindow,
) -> Result<CovarianceMap> {
    let (n, h, w) = (r.num_channels(), r.height(), r.width());
    if neighborhood == 0 || neighborhood > h || neighborhood > w {
        return Err(Error::invalid(format!(
            "neighborhood {neighborhood} invalid for {h}x{w} response map"
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    if window.size() != neighborhood {
        return Err(Error::invalid(format!(
            "window size {} does not match neighborhood {neighborhood}",
            window.size()
        )));
    }
    let (gh, gw) = (grid_len(h, stride), grid_len(w, stride));
    let mut mats = Vec::with_capacity(gh * gw);
    let mut resp = vec![0.0; n];
    for gi in 0..gh {
        for gj in 0..gw {
            let (r0, c0) = (gi * stride, gj * stride);
            let mut m = Matrix::zeros(n, n);
            for dr in 0..neighborhood {
                let row = (r0 + dr) % h;
                for dc in 0..neighborhood {
                    let col = (c0 + dc) % w;
                    let wt = window.get(dr, dc);
                    for (i, v) in resp.iter_mut().enumerate() {
                        *v = r.channel(i).get(row, col);
                    }
                    for i in 0..n {
                        for j in i..n {
                            let v = m.get(i, j) + wt * resp[i] * resp[j];
                            m.set(i, j, v);
                        }
                    }
                }
            }
            // Mirror the computed upper triangle for exact symmetry.
            for i in 0..n {
                for j in 0..i {
                    m.set(i, j, m.get(j, i));
                }
            }
            mats.push(m);
        }
    }
    CovarianceMap::from_matrices(gh, gw, n, neighborhood, stride, descriptor, false, mats)
}

/// Clamped eigendecomposition: negative eigenvalues from numerical noise are
/// set to 0 before any manipulation.
fn clamped_eig(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let dec = eig_sym(m)?;
    let vals = dec.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    Ok((vals, dec.eigenvectors))
}

/// Rebuild `V diag(vals) Vᵀ`, symmetrized against round-off.
fn rebuild(vals: &[f64], vecs: &Matrix) -> Matrix {
    let n = vecs.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for (k, &v) in vals.iter().enumerate() {
                acc += v * vecs.get(i, k) * vecs.get(j, k);
            }
            out.set(i, j, acc);
            out.set(j, i, acc);
        }
    }
    out
}

/// Zero every eigenvalue below a fixed threshold `tau ≥ 0`.
pub fn eig_threshold_fixed(cm: &CovarianceMap, tau: f64) -> Result<CovarianceMap> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("threshold must be >= 0, got {tau}")));
    }
    cm.map_matrices(|m| {
        let (mut vals, vecs) = clamped_eig(m)?;
        for v in &mut vals {
            if *v < tau {
                *v = 0.0;
            }
        }
        Ok(rebuild(&vals, &vecs))
    })
}

/// Which eigenvalue the adaptive threshold protects (and excludes from the
/// local-energy sum).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdaptiveExclusion {
    /// The largest eigenvalue (associated with mean luminance).
    #[default]
    Largest,
    /// The eigenvalue whose eigenvector has maximal weight on the given
    /// (low-pass) channel.
    LowPassChannel(usize),
}

/// Adaptive thresholding: per matrix, `threshold = fraction × Σ eigenvalues
/// excluding the protected one`; the protected eigenvalue is never zeroed.
pub fn eig_threshold_adaptive(cm: &CovarianceMap, fraction: f64) -> Result<CovarianceMap> {
    eig_threshold_adaptive_with(cm, fraction, AdaptiveExclusion::Largest)
}

/// [`eig_threshold_adaptive`] with an explicit protected-eigenvalue rule.
pub fn eig_threshold_adaptive_with(
    cm: &CovarianceMap,
    fraction: f64,
    exclusion: AdaptiveExclusion,
) -> Result<CovarianceMap> {
    if !(fraction >= 0.0) {
        return Err(Error::invalid(format!(
            "fraction must be >= 0, got {fraction}"
        )));
    }
    if let AdaptiveExclusion::LowPassChannel(ch) = exclusion {
        if ch >= cm.num_filters() {
            return Err(Error::invalid(format!(
                "low-pass channel {ch} out of range for {} filters",
                cm.num_filters()
            )));
        }
    }
    cm.map_matrices(|m| {
        let (mut vals, vecs) = clamped_eig(m)?;
        let protected = match exclusion {
            // Eigenvalues come sorted in descending order.
            AdaptiveExclusion::Largest => 0,
            AdaptiveExclusion::LowPassChannel(ch) => {
                let mut best = 0;
                for k in 1..vals.len() {
                    if vecs.get(ch, k).abs() > vecs.get(ch, best).abs() {
                        best = k;
                    }
                }
                best
            }
        };
        let local_energy: f64 = vals
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != protected)
            .map(|(_, &v)| v)
            .sum();
        let tau = fraction * local_energy;
        for (k, v) in vals.iter_mut().enumerate() {
            if k != protected && *v < tau {
                *v = 0.0;
            }
        }
        Ok(rebuild(&vals, &vecs))
    })
}

/// Raise every eigenvalue to the power `p > 0` (with `0^p = 0`).
pub fn eig_power(cm: &CovarianceMap, p: f64) -> Result<CovarianceMap> {
    if !(p > 0.0) {
        return Err(Error::invalid(format!("power must be > 0, got {p}")));
    }
    cm.map_matrices(|m| {
        let (mut vals, vecs) = clamped_eig(m)?;
        for v in &mut vals {
            if *v > 0.0 {
                *v = v.powf(p);
            }
        }
        Ok(rebuild(&vals, &vecs))
    })
}

/// Zero all off-diagonal entries, keeping only the local variances; the
/// result is flagged so measurement counting and matching use N entries per
/// location instead of N(N+1)/2.
pub fn restrict_to_variances(cm: &CovarianceMap) -> CovarianceMap {
    let mats = cm
        .mats
        .iter()
        .map(|m| {
            let n = m.rows();
            let mut d = Matrix::zeros(n, n);
            for i in 0..n {
                d.set(i, i, m.get(i, i));
            }
            d
        })
        .collect();
    CovarianceMap {
        mats,
        diagonal_only: true,
        window: cm.window,
        ..*cm
    }
}

/// Participation ratio `(Σλ)² / Σλ²` of a symmetric PSD matrix, an
/// effective-dimensionality scalar (equals `trace² / ‖C‖_F²`). Zero matrices
/// return 0.
pub fn participation_ratio(m: &Matrix) -> f64 {
    let n = m.rows();
    let trace: f64 = (0..n).map(|i| m.get(i, i)).sum();
    let frob2: f64 = m.data().iter().map(|v| v * v).sum();
    if frob2 == 0.0 {
        0.0
    } else {
        trace * trace / frob2
    }
}
