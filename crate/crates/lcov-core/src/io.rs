//! File formats: PGM and van Hateren `.iml` images, the `LCOVBANK1` filter
//! bank and `LCOVMAP1` covariance-map containers, key=value config text, and
//! the CSV log layouts.
//!
//! Every format has a pure byte-level decoder (`decode_*` / `parse_*`) so the
//! parsers can be exercised without touching the filesystem; the `load_*` /
//! `save_*` wrappers add paths on top.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::analysis::Histogram;
use crate::covmap::{CovWindow, CovarianceMap};
use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::linalg::Matrix;
use crate::signal::{Image, Kernel};
use crate::trainer::TrainLog;

pub const BANK_MAGIC: &[u8; 9] = b"LCOVBANK1";
pub const COVMAP_MAGIC: &[u8; 8] = b"LCOVMAP1";

/// Raw van Hateren frames are exactly this shape: 1024 rows of 1536
/// little-endian u16 samples, no header.
pub const IML_HEIGHT: usize = 1024;
pub const IML_WIDTH: usize = 1536;

// ---------------------------------------------------------------------------
// PGM

/// Pull the next header token, skipping whitespace and `#` comments.
fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("unexpected end of PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn pgm_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = pgm_token(bytes, pos)?;
    let s = std::str::from_utf8(tok).map_err(|_| Error::Format(format!("{what} is not ASCII")))?;
    s.parse::<usize>()
        .map_err(|_| Error::Format(format!("{what} is not a number: {s:?}")))
}

/// Decode an 8- or 16-bit PGM, ASCII (`P2`) or binary (`P5`). Pixel values
/// come out as their raw integer codes; preprocessing is a separate step.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let magic = pgm_token(bytes, &mut pos)?;
    let ascii = match magic {
        b"P2" => true,
        b"P5" => false,
        _ => return Err(Error::Format("not a PGM file (expected P2 or P5)".into())),
    };
    let width = pgm_number(bytes, &mut pos, "width")?;
    let height = pgm_number(bytes, &mut pos, "height")?;
    let maxval = pgm_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format("PGM dimensions must be positive".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} outside 1..=65535")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("PGM dimensions overflow".into()))?;

    let mut pixels = Vec::new();
    if ascii {
        pixels.reserve_exact(count.min(bytes.len()));
        for i in 0..count {
            let v = pgm_number(bytes, &mut pos, "pixel")
                .map_err(|_| Error::Format(format!("PGM raster ends at pixel {i} of {count}")))?;
            if v > maxval {
                return Err(Error::Format(format!("pixel value {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as f64);
        }
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Format("missing separator before PGM raster".into()));
        }
        pos += 1;
        let wide = maxval > 255;
        let need = count
            .checked_mul(if wide { 2 } else { 1 })
            .ok_or_else(|| Error::Format("PGM raster size overflows".into()))?;
        let raster = &bytes[pos..];
        if raster.len() != need {
            return Err(Error::Format(format!(
                "PGM raster is {} bytes, expected {need}",
                raster.len()
            )));
        }
        pixels.reserve_exact(count);
        if wide {
            for ch in raster.chunks_exact(2) {
                // 16-bit PGM samples are big-endian.
                let v = u16::from_be_bytes([ch[0], ch[1]]) as usize;
                if v > maxval {
                    return Err(Error::Format(format!("pixel value {v} exceeds maxval {maxval}")));
                }
                pixels.push(v as f64);
            }
        } else {
            for &b in raster {
                let v = b as usize;
                if v > maxval {
                    return Err(Error::Format(format!("pixel value {v} exceeds maxval {maxval}")));
                }
                pixels.push(v as f64);
            }
        }
    }
    Image::new(height, width, pixels)
}

/// Encode a 16-bit binary PGM from pixels that are already integer codes in
/// [0, 65535] — the writer half of the bit-exact round-trip.
pub fn encode_pgm16_raw(img: &Image) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.pixels() {
        if !(0.0..=65535.0).contains(&v) || v.fract() != 0.0 {
            return Err(Error::invalid(format!(
                "pixel {v} is not an integer code in [0, 65535]"
            )));
        }
        out.extend_from_slice(&(v as u16).to_be_bytes());
    }
    Ok(out)
}

/// Affine parameters of a rescaled 16-bit export: original value ≈
/// `min + code/65535 · (max − min)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSidecar {
    pub min: f64,
    pub max: f64,
}

impl RangeSidecar {
    pub fn to_text(self) -> String {
        format!("min={}\nmax={}\n", self.min, self.max)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut min = None;
        let mut max = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("sidecar line without '=': {line:?}")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("sidecar value not a number: {value:?}")))?;
            match key.trim() {
                "min" => min = Some(v),
                "max" => max = Some(v),
                other => return Err(Error::Format(format!("unknown sidecar key {other:?}"))),
            }
        }
        match (min, max) {
            (Some(min), Some(max)) if min.is_finite() && max.is_finite() && min <= max => {
                Ok(RangeSidecar { min, max })
            }
            _ => Err(Error::Format("sidecar needs finite min <= max".into())),
        }
    }

    /// Undo the quantization: map integer codes back to the recorded range.
    pub fn unquantize(&self, img: &Image) -> Image {
        let span = self.max - self.min;
        let mut out = img.clone();
        for v in out.pixels_mut() {
            *v = self.min + (*v / 65535.0) * span;
        }
        out
    }
}

/// Rescale arbitrary real pixels affinely onto the full 16-bit range and
/// encode; the sidecar records the affine map so quantitative comparisons
/// can undo it. A constant image maps to all-zero codes.
pub fn encode_pgm16_rescaled(img: &Image) -> Result<(Vec<u8>, RangeSidecar)> {
    if !img.is_finite() {
        return Err(Error::invalid("cannot encode non-finite pixels"));
    }
    let min = img.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = img.pixels().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut codes = img.clone();
    for v in codes.pixels_mut() {
        *v = if span == 0.0 {
            0.0
        } else {
            ((*v - min) / span * 65535.0).round()
        };
    }
    Ok((encode_pgm16_raw(&codes)?, RangeSidecar { min, max }))
}

// ---------------------------------------------------------------------------
// van Hateren .iml

/// Decode a raw `.iml` frame: headerless 1536×1024 16-bit little-endian.
pub fn decode_iml(bytes: &[u8]) -> Result<Image> {
    let need = IML_HEIGHT * IML_WIDTH * 2;
    if bytes.len() != need {
        return Err(Error::Format(format!(
            "iml file is {} bytes, expected {need} (truncated or not an iml frame)",
            bytes.len()
        )));
    }
    let pixels = bytes
        .chunks_exact(2)
        .map(|ch| u16::from_le_bytes([ch[0], ch[1]]) as f64)
        .collect();
    Image::new(IML_HEIGHT, IML_WIDTH, pixels)
}

/// Encode a raw `.iml` frame from integer codes (the decode inverse).
pub fn encode_iml(img: &Image) -> Result<Vec<u8>> {
    if img.height() != IML_HEIGHT || img.width() != IML_WIDTH {
        return Err(Error::invalid(format!(
            "iml frames are {IML_WIDTH}x{IML_HEIGHT}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let mut out = Vec::with_capacity(img.pixels().len() * 2);
    for &v in img.pixels() {
        if !(0.0..=65535.0).contains(&v) || v.fract() != 0.0 {
            return Err(Error::invalid(format!(
                "pixel {v} is not an integer code in [0, 65535]"
            )));
        }
        out.extend_from_slice(&(v as u16).to_le_bytes());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Image loading with preprocessing

/// Pixel-domain preprocessing applied right after decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preprocess {
    #[default]
    None,
    /// Subtract the image mean.
    MeanSubtract,
    /// Subtract the mean, then divide by the standard deviation.
    MeanSubtractUnitVariance,
    /// `ln(1 + v)` first (for linear-luminance `.iml` frames), then
    /// mean-subtract and divide by the standard deviation.
    LogNormalize,
}

impl Preprocess {
    pub const NAMES: [&'static str; 4] = [
        "none",
        "mean-subtract",
        "mean-subtract+unit-variance",
        "log-then-normalize",
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preprocess::None => Self::NAMES[0],
            Preprocess::MeanSubtract => Self::NAMES[1],
            Preprocess::MeanSubtractUnitVariance => Self::NAMES[2],
            Preprocess::LogNormalize => Self::NAMES[3],
        }
    }
}

impl FromStr for Preprocess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Preprocess::None),
            "mean-subtract" => Ok(Preprocess::MeanSubtract),
            "mean-subtract+unit-variance" => Ok(Preprocess::MeanSubtractUnitVariance),
            "log-then-normalize" => Ok(Preprocess::LogNormalize),
            other => Err(Error::Config(format!(
                "unknown preprocessing {other:?}; valid: {}",
                Self::NAMES.join(" | ")
            ))),
        }
    }
}

/// Apply a preprocessing mode. Variance normalization of a constant image is
/// rejected rather than dividing by zero.
pub fn apply_preprocess(img: &Image, mode: Preprocess) -> Result<Image> {
    let mut out = img.clone();
    if mode == Preprocess::None {
        return Ok(out);
    }
    if mode == Preprocess::LogNormalize {
        for v in out.pixels_mut() {
            if *v < 0.0 {
                return Err(Error::invalid("log preprocessing needs non-negative pixels"));
            }
            *v = (1.0 + *v).ln();
        }
    }
    let mean = out.mean();
    for v in out.pixels_mut() {
        *v -= mean;
    }
    if matches!(
        mode,
        Preprocess::MeanSubtractUnitVariance | Preprocess::LogNormalize
    ) {
        let var =
            out.pixels().iter().map(|v| v * v).sum::<f64>() / out.pixels().len() as f64;
        if var == 0.0 {
            return Err(Error::invalid("constant image cannot be variance-normalized"));
        }
        let sd = var.sqrt();
        for v in out.pixels_mut() {
            *v /= sd;
        }
    }
    Ok(out)
}

/// [`std::fs::read`] with the path folded into the error message.
pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

/// [`std::fs::write`] with the path folded into the error message.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

/// Load an image file — `.iml` by extension, PGM otherwise — and apply the
/// preprocessing mode. The path is recorded as the image's provenance.
pub fn load_image(path: &Path, mode: Preprocess) -> Result<Image> {
    let bytes = read_file(path)?;
    let decoded = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("iml")) {
        decode_iml(&bytes)?
    } else {
        decode_pgm(&bytes)?
    };
    let mut img = apply_preprocess(&decoded, mode)?;
    img.provenance = Some(path.display().to_string());
    Ok(img)
}

/// Write `img` as a rescaled 16-bit PGM plus its `<path>.range` sidecar.
pub fn save_image_rescaled(path: &Path, img: &Image) -> Result<RangeSidecar> {
    let (bytes, sidecar) = encode_pgm16_rescaled(img)?;
    write_file(path, bytes)?;
    write_file(&sidecar_path(path), sidecar.to_text())?;
    Ok(sidecar)
}

/// `foo.pgm` → `foo.pgm.range`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".range");
    std::path::PathBuf::from(s)
}

// ---------------------------------------------------------------------------
// LCOVBANK1

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let s = self.take(4, what)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let s = self.take(8, what)?;
        Ok(f64::from_le_bytes(s.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Serialize a filter bank: magic, N, K, blur sigma, then taps filter-major
/// row-major as 64-bit little-endian floats.
pub fn encode_bank(bank: &FilterBank) -> Vec<u8> {
    let n = bank.num_filters();
    let k = bank.kernel_size();
    let mut out = Vec::with_capacity(25 + n * k * k * 8);
    out.extend_from_slice(BANK_MAGIC);
    push_u32(&mut out, n as u32);
    push_u32(&mut out, k as u32);
    push_f64(&mut out, bank.blur_sigma());
    for kernel in bank.kernels() {
        for &t in kernel.taps() {
            push_f64(&mut out, t);
        }
    }
    out
}

/// Decode [`encode_bank`] output, re-validating every bank invariant.
pub fn decode_bank(bytes: &[u8]) -> Result<FilterBank> {
    let mut r = Reader::new(bytes);
    if r.take(BANK_MAGIC.len(), "magic")? != BANK_MAGIC {
        return Err(Error::Format("not a LCOVBANK1 file".into()));
    }
    let n = r.u32("filter count")? as usize;
    let k = r.u32("kernel size")? as usize;
    let blur_sigma = r.f64("blur sigma")?;
    if n == 0 || k == 0 {
        return Err(Error::Format("bank dimensions must be positive".into()));
    }
    let per_filter = k
        .checked_mul(k)
        .and_then(|kk| kk.checked_mul(8))
        .ok_or_else(|| Error::Format("kernel size overflows".into()))?;
    let need = n
        .checked_mul(per_filter)
        .ok_or_else(|| Error::Format("bank payload size overflows".into()))?;
    if r.remaining() != need {
        return Err(Error::Format(format!(
            "bank payload is {} bytes, expected {need}",
            r.remaining()
        )));
    }
    if !blur_sigma.is_finite() || blur_sigma < 0.0 {
        return Err(Error::Format(format!("bad blur sigma {blur_sigma}")));
    }
    let mut kernels = Vec::with_capacity(n);
    for i in 0..n {
        let mut taps = Vec::with_capacity(k * k);
        for t in 0..k * k {
            taps.push(r.f64(&format!("filter {i} tap {t}"))?);
        }
        kernels.push(Kernel::new(k, taps).map_err(|e| Error::Format(e.to_string()))?);
    }
    FilterBank::new(kernels, blur_sigma).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_bank(path: &Path, bank: &FilterBank) -> Result<()> {
    write_file(path, encode_bank(bank))
}

pub fn load_bank(path: &Path) -> Result<FilterBank> {
    decode_bank(&read_file(path)?)
}

// ---------------------------------------------------------------------------
// LCOVMAP1

const WINDOW_KIND_BOXCAR: u8 = 0;
const WINDOW_KIND_GAUSSIAN: u8 = 1;
const FLAG_DIAGONAL_ONLY: u8 = 1;

/// Serialize a covariance map: magic, grid and filter geometry, window
/// descriptor, then per-location upper-triangular (or diagonal-only)
/// entries as 64-bit little-endian floats.
///
/// Maps carrying a [`CovWindow::Custom`] window are rejected: the format
/// stores a window by descriptor, and a custom kernel has none.
pub fn encode_covmap(map: &CovarianceMap) -> Result<Vec<u8>> {
    let (kind, sigma) = match map.window() {
        CovWindow::Boxcar => (WINDOW_KIND_BOXCAR, 0.0),
        CovWindow::Gaussian { sigma } => (WINDOW_KIND_GAUSSIAN, sigma),
        CovWindow::Custom => {
            return Err(Error::invalid(
                "a custom-window covariance map cannot be serialized",
            ))
        }
    };
    let n = map.num_filters();
    let count = map.count_measurements();
    let mut out = Vec::with_capacity(38 + count.total * 8);
    out.extend_from_slice(COVMAP_MAGIC);
    push_u32(&mut out, map.grid_height() as u32);
    push_u32(&mut out, map.grid_width() as u32);
    push_u32(&mut out, n as u32);
    push_u32(&mut out, map.neighborhood() as u32);
    push_u32(&mut out, map.stride() as u32);
    out.push(kind);
    push_f64(&mut out, sigma);
    out.push(if map.diagonal_only() { FLAG_DIAGONAL_ONLY } else { 0 });
    for m in map.matrices() {
        if map.diagonal_only() {
            for i in 0..n {
                push_f64(&mut out, m.get(i, i));
            }
        } else {
            for i in 0..n {
                for j in i..n {
                    push_f64(&mut out, m.get(i, j));
                }
            }
        }
    }
    Ok(out)
}

/// Decode [`encode_covmap`] output, re-validating the map invariants.
pub fn decode_covmap(bytes: &[u8]) -> Result<CovarianceMap> {
    let mut r = Reader::new(bytes);
    if r.take(COVMAP_MAGIC.len(), "magic")? != COVMAP_MAGIC {
        return Err(Error::Format("not a LCOVMAP1 file".into()));
    }
    let grid_h = r.u32("grid height")? as usize;
    let grid_w = r.u32("grid width")? as usize;
    let n = r.u32("filter count")? as usize;
    let neighborhood = r.u32("neighborhood")? as usize;
    let stride = r.u32("stride")? as usize;
    let kind = r.u8("window kind")?;
    let sigma = r.f64("window sigma")?;
    let flags = r.u8("flags")?;
    if grid_h == 0 || grid_w == 0 || n == 0 || neighborhood == 0 || stride == 0 {
        return Err(Error::Format("covariance map dimensions must be positive".into()));
    }
    let window = match kind {
        WINDOW_KIND_BOXCAR if sigma == 0.0 => CovWindow::Boxcar,
        WINDOW_KIND_BOXCAR => {
            return Err(Error::Format("boxcar window must carry sigma 0".into()))
        }
        WINDOW_KIND_GAUSSIAN if sigma.is_finite() && sigma > 0.0 => {
            CovWindow::Gaussian { sigma }
        }
        WINDOW_KIND_GAUSSIAN => {
            return Err(Error::Format(format!("bad gaussian window sigma {sigma}")))
        }
        other => return Err(Error::Format(format!("unknown window kind {other}"))),
    };
    if flags & !FLAG_DIAGONAL_ONLY != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#04x}")));
    }
    let diagonal_only = flags & FLAG_DIAGONAL_ONLY != 0;
    let per_loc = if diagonal_only { n } else { n * (n + 1) / 2 };
    let locations = grid_h
        .checked_mul(grid_w)
        .ok_or_else(|| Error::Format("grid size overflows".into()))?;
    let need = locations
        .checked_mul(per_loc)
        .and_then(|e| e.checked_mul(8))
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    if r.remaining() != need {
        return Err(Error::Format(format!(
            "covariance payload is {} bytes, expected {need}",
            r.remaining()
        )));
    }
    let mut mats = Vec::with_capacity(locations);
    for loc in 0..locations {
        let mut m = Matrix::zeros(n, n);
        if diagonal_only {
            for i in 0..n {
                m.set(i, i, r.f64(&format!("location {loc} diagonal {i}"))?);
            }
        } else {
            for i in 0..n {
                for j in i..n {
                    let v = r.f64(&format!("location {loc} entry ({i},{j})"))?;
                    m.set(i, j, v);
                    m.set(j, i, v);
                }
            }
        }
        mats.push(m);
    }
    CovarianceMap::from_matrices(
        grid_h,
        grid_w,
        n,
        neighborhood,
        stride,
        window,
        diagonal_only,
        mats,
    )
    .map_err(|e| Error::Format(e.to_string()))
}

pub fn save_covmap(path: &Path, map: &CovarianceMap) -> Result<()> {
    write_file(path, encode_covmap(map)?)
}

pub fn load_covmap(path: &Path) -> Result<CovarianceMap> {
    decode_covmap(&read_file(path)?)
}

// ---------------------------------------------------------------------------
// Config text

/// Parse `key=value` lines: blank lines and `#` comments are skipped, keys
/// must be unique, whitespace around keys and values is trimmed, and the
/// value may itself contain `=`. Which keys are meaningful is the caller's
/// business.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key {key:?}",
                lineno + 1
            )));
        }
    }
    Ok(out)
}

/// [`parse_config`] from raw bytes (UTF-8 enforced).
pub fn parse_config_bytes(bytes: &[u8]) -> Result<BTreeMap<String, String>> {
    let text =
        std::str::from_utf8(bytes).map_err(|_| Error::Config("config is not UTF-8".into()))?;
    parse_config(text)
}

// ---------------------------------------------------------------------------
// CSV layouts

/// Training log: one row per step.
pub fn train_log_csv(log: &TrainLog) -> String {
    let mut out = String::from("step,local_dim,recons,global_dim,total,elapsed_seconds\n");
    for rec in &log.records {
        let e = rec.energy;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            rec.step, e.local_dim, e.recons, e.global_dim, e.total, rec.elapsed_seconds
        );
    }
    out
}

/// Histogram rows as `bin_left,bin_right,count`.
pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_left,bin_right,count\n");
    for (i, &c) in h.counts().iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", h.edges()[i], h.edges()[i + 1], c);
    }
    out
}

/// Synthesis trace rows as `step,objective,step_size` where the step size is
/// the harmonic schedule value `eta0/max(step, 1)`.
pub fn trace_csv(trace: &[(usize, f64)], eta0: f64) -> String {
    let mut out = String::from("step,objective,step_size\n");
    for &(step, objective) in trace {
        let _ = writeln!(out, "{step},{objective},{}", eta0 / step.max(1) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covmap::{extract_standard, restrict_to_variances};
    use crate::filterbank::{apply, FilterBank};
    use crate::objective::EnergyBreakdown;
    use crate::synthesis::white_noise;
    use crate::trainer::TrainRecord;

    #[test]
    fn pgm_ascii_reference_values() {
        let bytes = b"P2\n# tiny test card\n2 2\n255\n0 85\n170 255\n";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!(img.height(), 2);
        assert_eq!(img.width(), 2);
        assert_eq!(img.pixels(), &[0.0, 85.0, 170.0, 255.0]);
    }

    #[test]
    fn pgm_binary_8bit_decodes() {
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 10, 20, 30, 40, 250]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0.0, 10.0, 20.0, 30.0, 40.0, 250.0]);
    }

    #[test]
    fn pgm16_round_trip_is_bit_exact() {
        let mut img = Image::zeros(5, 7);
        for (i, v) in img.pixels_mut().iter_mut().enumerate() {
            *v = ((i * 9973) % 65536) as f64;
        }
        let bytes = encode_pgm16_raw(&img).unwrap();
        let back = decode_pgm(&bytes).unwrap();
        assert_eq!(back.pixels(), img.pixels());
        assert_eq!(encode_pgm16_raw(&back).unwrap(), bytes);
    }

    #[test]
    fn pgm16_binary_samples_are_big_endian() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0x02]); // 0x0102 = 258
        assert_eq!(decode_pgm(&bytes).unwrap().pixels(), &[258.0]);
    }

    #[test]
    fn pgm_rejects_malformed_inputs() {
        assert!(decode_pgm(b"P3\n1 1\n255\n0").is_err()); // wrong magic
        assert!(decode_pgm(b"P2\n0 2\n255\n").is_err()); // zero dim
        assert!(decode_pgm(b"P2\n1 1\n0\n0").is_err()); // maxval 0
        assert!(decode_pgm(b"P2\n1 1\n70000\n0").is_err()); // maxval too big
        assert!(decode_pgm(b"P2\n2 2\n255\n1 2 3").is_err()); // short raster
        assert!(decode_pgm(b"P2\n1 1\n255\n300").is_err()); // over maxval
        let mut long = b"P5\n2 1\n255\n".to_vec();
        long.extend_from_slice(&[1, 2, 3]); // extra byte
        assert!(decode_pgm(&long).is_err());
        assert!(decode_pgm(b"").is_err());
    }

    #[test]
    fn pgm_rescaled_records_affine_range() {
        let img = Image::new(1, 3, vec![-2.0, 0.0, 6.0]).unwrap();
        let (bytes, sidecar) = encode_pgm16_rescaled(&img).unwrap();
        assert_eq!(sidecar, RangeSidecar { min: -2.0, max: 6.0 });
        let codes = decode_pgm(&bytes).unwrap();
        assert_eq!(codes.pixels()[0], 0.0);
        assert_eq!(codes.pixels()[2], 65535.0);
        let restored = sidecar.unquantize(&codes);
        for (a, b) in restored.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() <= 8.0 / 65535.0, "{a} vs {b}");
        }
        let parsed = RangeSidecar::parse(&sidecar.to_text()).unwrap();
        assert_eq!(parsed, sidecar);
    }

    #[test]
    fn pgm_rescaled_constant_image() {
        let img = Image::new(2, 2, vec![3.5; 4]).unwrap();
        let (bytes, sidecar) = encode_pgm16_rescaled(&img).unwrap();
        let codes = decode_pgm(&bytes).unwrap();
        assert!(codes.pixels().iter().all(|&v| v == 0.0));
        let restored = sidecar.unquantize(&codes);
        assert!(restored.pixels().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn iml_round_trip_and_truncation() {
        let mut img = Image::zeros(IML_HEIGHT, IML_WIDTH);
        for (i, v) in img.pixels_mut().iter_mut().enumerate() {
            *v = ((i * 31) % 65536) as f64;
        }
        let bytes = encode_iml(&img).unwrap();
        assert_eq!(bytes.len(), IML_HEIGHT * IML_WIDTH * 2);
        let back = decode_iml(&bytes).unwrap();
        assert_eq!(back.pixels(), img.pixels());
        assert_eq!(encode_iml(&back).unwrap(), bytes);

        let err = decode_iml(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn iml_endianness_is_little() {
        let mut bytes = vec![0u8; IML_HEIGHT * IML_WIDTH * 2];
        bytes[0] = 0x02;
        bytes[1] = 0x01; // 0x0102 little-endian = 258
        assert_eq!(decode_iml(&bytes).unwrap().pixels()[0], 258.0);
    }

    #[test]
    fn preprocess_modes() {
        let img = Image::new(1, 4, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(
            apply_preprocess(&img, Preprocess::None).unwrap().pixels(),
            img.pixels()
        );
        let ms = apply_preprocess(&img, Preprocess::MeanSubtract).unwrap();
        assert!(ms.mean().abs() < 1e-12);
        let uv = apply_preprocess(&img, Preprocess::MeanSubtractUnitVariance).unwrap();
        let var = uv.pixels().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var - 1.0).abs() < 1e-12);
        let ln = apply_preprocess(&img, Preprocess::LogNormalize).unwrap();
        assert!(ln.mean().abs() < 1e-12);
        let constant = Image::new(1, 3, vec![2.0; 3]).unwrap();
        assert!(apply_preprocess(&constant, Preprocess::MeanSubtractUnitVariance).is_err());
        let negative = Image::new(1, 2, vec![-1.0, 1.0]).unwrap();
        assert!(apply_preprocess(&negative, Preprocess::LogNormalize).is_err());
    }

    #[test]
    fn preprocess_names_round_trip() {
        for name in Preprocess::NAMES {
            let mode: Preprocess = name.parse().unwrap();
            assert_eq!(mode.name(), name);
        }
        assert!("gamma".parse::<Preprocess>().is_err());
    }

    #[test]
    fn load_image_dispatches_on_extension() {
        let dir = tempfile::tempdir().unwrap();
        let pgm_path = dir.path().join("img.pgm");
        let mut img = Image::zeros(3, 4);
        for (i, v) in img.pixels_mut().iter_mut().enumerate() {
            *v = (i * 100) as f64;
        }
        std::fs::write(&pgm_path, encode_pgm16_raw(&img).unwrap()).unwrap();
        let loaded = load_image(&pgm_path, Preprocess::None).unwrap();
        assert_eq!(loaded.pixels(), img.pixels());
        assert!(loaded.provenance.as_deref().unwrap().ends_with("img.pgm"));

        let iml_path = dir.path().join("frame.iml");
        std::fs::write(&iml_path, vec![0u8; IML_HEIGHT * IML_WIDTH * 2]).unwrap();
        let frame = load_image(&iml_path, Preprocess::None).unwrap();
        assert_eq!(frame.height(), IML_HEIGHT);
        assert_eq!(frame.width(), IML_WIDTH);

        let junk = dir.path().join("junk.bin");
        std::fs::write(&junk, b"not an image").unwrap();
        assert!(load_image(&junk, Preprocess::None).is_err());
    }

    #[test]
    fn save_image_writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.pgm");
        let img = Image::new(2, 2, vec![0.25, -1.5, 3.0, 0.0]).unwrap();
        let sidecar = save_image_rescaled(&path, &img).unwrap();
        let text = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        assert_eq!(RangeSidecar::parse(&text).unwrap(), sidecar);
        let codes = decode_pgm(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!(codes.height(), 2);
    }

    #[test]
    fn bank_round_trip_is_bit_exact() {
        let bank = FilterBank::random(3, 7, 2.5, 99).unwrap();
        let bytes = encode_bank(&bank);
        let back = decode_bank(&bytes).unwrap();
        assert_eq!(back.num_filters(), 3);
        assert_eq!(back.kernel_size(), 7);
        assert_eq!(back.blur_sigma(), 2.5);
        for i in 0..3 {
            assert_eq!(back.kernel(i).taps(), bank.kernel(i).taps());
        }
        assert_eq!(encode_bank(&back), bytes);
    }

    #[test]
    fn bank_decode_rejects_malformed_inputs() {
        let bank = FilterBank::random(2, 4, 0.0, 1).unwrap();
        let good = encode_bank(&bank);
        assert!(decode_bank(b"LCOVBANKX").is_err());
        assert!(decode_bank(&good[..10]).is_err()); // truncated header
        assert!(decode_bank(&good[..good.len() - 8]).is_err()); // short payload
        let mut extra = good.clone();
        extra.extend_from_slice(&[0; 8]); // long payload
        assert!(decode_bank(&extra).is_err());
        let mut zero_n = good.clone();
        zero_n[9..13].copy_from_slice(&0u32.to_le_bytes());
        assert!(decode_bank(&zero_n).is_err());
        let mut nan_tap = good.clone();
        nan_tap[25..33].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_bank(&nan_tap).is_err());
        let mut bad_sigma = good;
        bad_sigma[17..25].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(decode_bank(&bad_sigma).is_err());
    }

    fn sample_covmap(diagonal_only: bool) -> CovarianceMap {
        let bank = FilterBank::random(3, 5, 0.0, 5).unwrap();
        let r = apply(&bank, &white_noise(20, 24, 6)).unwrap();
        let map = extract_standard(&r, 6, 4, CovWindow::Gaussian { sigma: 1.5 }).unwrap();
        if diagonal_only {
            restrict_to_variances(&map)
        } else {
            map
        }
    }

    #[test]
    fn covmap_round_trip_is_bit_exact() {
        for diag in [false, true] {
            let map = sample_covmap(diag);
            let bytes = encode_covmap(&map).unwrap();
            let back = decode_covmap(&bytes).unwrap();
            assert!(back.same_geometry(&map));
            assert_eq!(back.diagonal_only(), diag);
            for (a, b) in back.matrices().iter().zip(map.matrices()) {
                assert_eq!(a.data(), b.data());
            }
            assert_eq!(encode_covmap(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn covmap_boxcar_window_round_trips() {
        let bank = FilterBank::random(2, 3, 0.0, 7).unwrap();
        let r = apply(&bank, &white_noise(12, 12, 8)).unwrap();
        let map = extract_standard(&r, 4, 4, CovWindow::Boxcar).unwrap();
        let back = decode_covmap(&encode_covmap(&map).unwrap()).unwrap();
        assert_eq!(back.window(), CovWindow::Boxcar);
    }

    #[test]
    fn covmap_custom_window_is_not_serializable() {
        let bank = FilterBank::random(2, 3, 0.0, 9).unwrap();
        let r = apply(&bank, &white_noise(12, 12, 10)).unwrap();
        let window = Kernel::new(4, vec![1.0 / 16.0; 16]).unwrap();
        let map = crate::covmap::extract(&r, 4, 4, &window).unwrap();
        assert!(encode_covmap(&map).is_err());
    }

    #[test]
    fn covmap_decode_rejects_malformed_inputs() {
        let good = encode_covmap(&sample_covmap(false)).unwrap();
        assert!(decode_covmap(b"LCOVMAPX").is_err());
        assert!(decode_covmap(&good[..20]).is_err());
        assert!(decode_covmap(&good[..good.len() - 1]).is_err());
        let mut bad_kind = good.clone();
        bad_kind[28] = 9;
        assert!(decode_covmap(&bad_kind).is_err());
        let mut bad_flags = good.clone();
        bad_flags[37] = 0xfe;
        assert!(decode_covmap(&bad_flags).is_err());
        let mut boxcar_sigma = good;
        boxcar_sigma[28] = 0; // boxcar kind, but sigma stays 1.5
        assert!(decode_covmap(&boxcar_sigma).is_err());
    }

    #[test]
    fn config_parses_and_validates() {
        let map = parse_config("# comment\n\n lambda = 3500\nmu=100\npath=a=b\n").unwrap();
        assert_eq!(map["lambda"], "3500");
        assert_eq!(map["mu"], "100");
        assert_eq!(map["path"], "a=b");
        assert_eq!(map.len(), 3);

        assert!(parse_config("").unwrap().is_empty());
        assert!(parse_config("novalue\n").is_err());
        assert!(parse_config("=5\n").is_err());
        assert!(parse_config("a=1\na=2\n").is_err());
        assert!(parse_config_bytes(&[0xff, 0xfe]).is_err());
        assert_eq!(parse_config_bytes(b"k=v").unwrap()["k"], "v");
    }

    #[test]
    fn train_log_csv_layout() {
        let log = TrainLog {
            records: vec![TrainRecord {
                step: 1,
                energy: EnergyBreakdown {
                    local_dim: 1.5,
                    recons: 2.0,
                    global_dim: -0.5,
                    total: 201.0,
                    lambda: 100.0,
                    mu: 1.0,
                },
                elapsed_seconds: 0.0,
            }],
            checkpoints: Vec::new(),
            learning_rate: 0.1,
        };
        assert_eq!(
            train_log_csv(&log),
            "step,local_dim,recons,global_dim,total,elapsed_seconds\n1,1.5,2,-0.5,201,0\n"
        );
    }

    #[test]
    fn histogram_csv_layout() {
        let m = crate::analysis::CorrelationMap::from_parts(
            1,
            3,
            4,
            4,
            vec![0.1, 0.6, 0.9],
            vec![true; 3],
        )
        .unwrap();
        let h = crate::analysis::correlation_histogram(&m, 2).unwrap();
        assert_eq!(histogram_csv(&h), "bin_left,bin_right,count\n0,0.5,1\n0.5,1,2\n");
    }

    #[test]
    fn trace_csv_layout() {
        let trace = vec![(0, 10.0), (1, 8.0), (4, 6.5)];
        assert_eq!(
            trace_csv(&trace, 0.5),
            "step,objective,step_size\n0,10,0.5\n1,8,0.5\n4,6.5,0.125\n"
        );
    }
}
