//! Deterministic synthetic data generators: a parameterized Swiss roll,
//! a rotated/translated coin image, and a bent L-bracket point cloud,
//! plus ingestion of external base assets (PGM/CSV images, XYZ clouds).

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{McuError, Result};
use crate::io_util::write_atomic;

pub const PENNY_SIZE: usize = 55;
pub const BRACKET_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Swiss,
    Penny,
    Bracket,
}

impl GeneratorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "swiss" => Ok(Self::Swiss),
            "penny" => Ok(Self::Penny),
            "bracket" => Ok(Self::Bracket),
            other => Err(McuError::Config(format!(
                "unknown generator kind '{other}' (expected swiss, penny, or bracket)"
            ))),
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Swiss => "swiss",
            Self::Penny => "penny",
            Self::Bracket => "bracket",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub sample_count: usize,
    /// N×2 control settings (c1, c2), each in [1, 10].
    pub controls: DMatrix<f64>,
    pub seed: u64,
    pub base_asset: Option<PathBuf>,
    /// Swiss roll base-plane resolution (nx, ny).
    pub grid: (usize, usize),
    /// Bracket nominal cloud size when synthesized.
    pub bracket_points: usize,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, sample_count: usize, seed: u64) -> Self {
        let controls = draw_controls(sample_count, seed);
        Self {
            kind,
            sample_count,
            controls,
            seed,
            base_asset: None,
            grid: (40, 40),
            bracket_points: BRACKET_POINTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.controls.nrows() != self.sample_count || self.controls.ncols() != 2 {
            return Err(McuError::Config(format!(
                "controls must be {}x2, got {}x{}",
                self.sample_count,
                self.controls.nrows(),
                self.controls.ncols()
            )));
        }
        for &c in self.controls.iter() {
            if !(1.0..=10.0).contains(&c) {
                return Err(McuError::Config(format!(
                    "control value {c} outside [1, 10]"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform controls on [1, 10]; each sample draws from its own stream
/// derived from the master seed so generation order is irrelevant.
pub fn draw_controls(n: usize, seed: u64) -> DMatrix<f64> {
    let mut controls = DMatrix::zeros(n, 2);
    for i in 0..n {
        let mut rng = sample_rng(seed, i);
        controls[(i, 0)] = rng.gen_range(1.0..=10.0);
        controls[(i, 1)] = rng.gen_range(1.0..=10.0);
    }
    controls
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x2545f4914f6cdd1d)
            .wrapping_add(index as u64 + 1),
    )
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// N×2 control settings in original units.
    pub x: DMatrix<f64>,
    /// N×D flattened responses (point-major or pixel row-major).
    pub y: DMatrix<f64>,
    /// Coordinates per response point (3 for clouds, 1 for images).
    pub ambient_dim: usize,
    /// Swiss roll only: the (x, y) base plane the map was applied to.
    pub base_plane: Option<DMatrix<f64>>,
}

/// Dispatch to the generator named by the spec, loading the base asset
/// when given or falling back to the deterministic synthetic one.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    match spec.kind {
        GeneratorKind::Swiss => gen_swiss_roll(spec),
        GeneratorKind::Penny => {
            let base = match &spec.base_asset {
                Some(path) => load_image(path)?,
                None => synthetic_penny_image(),
            };
            gen_penny(spec, &base)
        }
        GeneratorKind::Bracket => {
            let base = match &spec.base_asset {
                Some(path) => load_xyz(path)?,
                None => synthetic_bracket_cloud(spec.bracket_points),
            };
            gen_bracket(spec, &base)
        }
    }
}

/// Radial coefficient of the Swiss roll map: 6 at c1=1, 10 at c1=10.
fn radial_coefficient(c1: f64) -> f64 {
    4.0 / 9.0 * c1 + 50.0 / 9.0
}

/// Fold rate: r = 1 + c2/10.
fn fold_rate(c2: f64) -> f64 {
    1.0 + c2 / 10.0
}

/// Roll a flat (x, y) plane into 3-D: the angle winds with x at a rate
/// set by c2 while c1 scales the radius; y passes through untouched.
pub fn gen_swiss_roll(spec: &GeneratorSpec) -> Result<Dataset> {
    let (nx, ny) = spec.grid;
    let n_points = nx * ny;
    let mut base_plane = DMatrix::zeros(n_points, 2);
    for i in 0..nx {
        for j in 0..ny {
            let p = i * ny + j;
            base_plane[(p, 0)] = 4.0 + 12.0 * i as f64 / (nx - 1) as f64;
            base_plane[(p, 1)] = 20.0 * j as f64 / (ny - 1) as f64;
        }
    }

    let n = spec.sample_count;
    let mut y = DMatrix::zeros(n, 3 * n_points);
    for s in 0..n {
        let coeff = radial_coefficient(spec.controls[(s, 0)]);
        let r = fold_rate(spec.controls[(s, 1)]);
        for p in 0..n_points {
            let (px, py) = (base_plane[(p, 0)], base_plane[(p, 1)]);
            let angle = 2.0 * std::f64::consts::PI * r * (px - 4.0) / 12.0;
            y[(s, 3 * p)] = coeff * px * angle.cos();
            y[(s, 3 * p + 1)] = py;
            y[(s, 3 * p + 2)] = coeff * px * angle.sin();
        }
    }
    Ok(Dataset {
        x: spec.controls.clone(),
        y,
        ambient_dim: 3,
        base_plane: Some(base_plane),
    })
}

fn bilinear(image: &DMatrix<f64>, row: f64, col: f64) -> f64 {
    let (h, w) = (image.nrows() as isize, image.ncols() as isize);
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h || c >= w {
            0.0
        } else {
            image[(r as usize, c as usize)]
        }
    };
    let (r0, c0) = (r0 as isize, c0 as isize);
    at(r0, c0) * (1.0 - fr) * (1.0 - fc)
        + at(r0, c0 + 1) * (1.0 - fr) * fc
        + at(r0 + 1, c0) * fr * (1.0 - fc)
        + at(r0 + 1, c0 + 1) * fr * fc
}

/// Rotate then translate one image about its exact center, resampling
/// with bilinear interpolation and zero fill outside the frame.
pub fn transform_image(base: &DMatrix<f64>, degrees_ccw: f64, shift: (f64, f64)) -> DMatrix<f64> {
    let l = base.nrows();
    let center = (l as f64 - 1.0) / 2.0;
    let theta = degrees_ccw.to_radians();
    let (sin, cos) = (theta.sin(), theta.cos());
    DMatrix::from_fn(l, l, |row, col| {
        // output pixel in centered math coordinates (x right, y up)
        let x = col as f64 - center - shift.0;
        let y = (l as f64 - 1.0 - row as f64) - center - shift.1;
        // undo the ccw rotation to find the source location
        let sx = cos * x + sin * y;
        let sy = -sin * x + cos * y;
        let src_col = sx + center;
        let src_row = l as f64 - 1.0 - (sy + center);
        bilinear(base, src_row, src_col)
    })
}

/// Rigid-motion image family: c1 sets the rotation (−4(c1−5) degrees
/// counterclockwise), c2 the sub-pixel translation; pixels flatten
/// row-major.
pub fn gen_penny(spec: &GeneratorSpec, base: &DMatrix<f64>) -> Result<Dataset> {
    let l = PENNY_SIZE;
    if base.nrows() != l || base.ncols() != l {
        return Err(McuError::BadBaseImage(format!(
            "expected {l}x{l} grayscale image, got {}x{}",
            base.nrows(),
            base.ncols()
        )));
    }
    let n = spec.sample_count;
    let mut y = DMatrix::zeros(n, l * l);
    for s in 0..n {
        let (c1, c2) = (spec.controls[(s, 0)], spec.controls[(s, 1)]);
        let degrees = -4.0 * (c1 - 5.0);
        let lf = l as f64;
        let shift = (
            (c2 - 5.0) * lf / 40.0 / 10.0,
            lf / 8.0 * (std::f64::consts::PI * (c2 - 5.0) / 10.0).sin() / 10.0,
        );
        let img = transform_image(base, degrees, shift);
        for row in 0..l {
            for col in 0..l {
                y[(s, row * l + col)] = img[(row, col)];
            }
        }
    }
    Ok(Dataset {
        x: spec.controls.clone(),
        y,
        ambient_dim: 1,
        base_plane: None,
    })
}

/// Bending pivot position on the mounting plate: pivot = 1 + 0.15·c2.
fn bracket_pivot(c2: f64) -> f64 {
    1.0 + 0.15 * c2
}

/// Bend the nominal cloud about a c2-dependent pivot line: points past
/// the pivot lift in y by a cosine profile whose rate grows with c1.
pub fn gen_bracket(spec: &GeneratorSpec, base: &DMatrix<f64>) -> Result<Dataset> {
    if base.ncols() != 3 || base.nrows() == 0 {
        return Err(McuError::BadBaseCloud(format!(
            "expected a nonempty Px3 cloud, got {}x{}",
            base.nrows(),
            base.ncols()
        )));
    }
    let n_points = base.nrows();
    let n = spec.sample_count;
    let mut y = DMatrix::zeros(n, 3 * n_points);
    for s in 0..n {
        let (c1, c2) = (spec.controls[(s, 0)], spec.controls[(s, 1)]);
        let pivot = bracket_pivot(c2);
        let rate = 1.0 + c1 / 15.0;
        for p in 0..n_points {
            let (px, py, pz) = (base[(p, 0)], base[(p, 1)], base[(p, 2)]);
            let lifted = if px > pivot {
                py + 10.0 * (1.0 - (rate * (px - pivot) / 4.0).cos())
            } else {
                py
            };
            y[(s, 3 * p)] = px;
            y[(s, 3 * p + 1)] = lifted;
            y[(s, 3 * p + 2)] = pz;
        }
    }
    Ok(Dataset {
        x: spec.controls.clone(),
        y,
        ambient_dim: 3,
        base_plane: None,
    })
}

/// Deterministic stand-in for a scanned coin: a radial-intensity disk
/// with an angular emboss and an off-center boss so that rotation is
/// observable.
pub fn synthetic_penny_image() -> DMatrix<f64> {
    let l = PENNY_SIZE;
    let center = (l as f64 - 1.0) / 2.0;
    let radius = center - 1.5;
    DMatrix::from_fn(l, l, |row, col| {
        let dx = col as f64 - center;
        let dy = row as f64 - center;
        let r = (dx * dx + dy * dy).sqrt();
        if r > radius {
            return 0.0;
        }
        let theta = dy.atan2(dx);
        // smooth rim falloff plus a low and a high angular harmonic:
        // the high harmonic makes the rotation orbit strongly curved in
        // pixel space, so linear projections cannot flatten it
        let rim = (1.0 - (r / radius).powi(4)).max(0.0);
        let emboss = 0.16 * (3.0 * theta + 0.8 * r / radius).sin()
            + 0.22 * (6.0 * theta + 2.5 * r / radius).sin()
            + 0.08 * (13.0 * theta + 1.1 * r).sin();
        let ripple = 0.14 * (1.3 * r).cos();
        // off-center boss breaks all rotational symmetry
        let bx = dx - 0.30 * radius;
        let by = dy + 0.18 * radius;
        let boss = 0.35 * (-(bx * bx + by * by) / 18.0).exp();
        (0.55 * rim + emboss + ripple + boss).clamp(0.0, 1.0)
    })
}

/// Deterministic stand-in for the nominal bracket: an L-shaped flat
/// plate spanning x in [0, 4] (long arm plus an upright short arm) with
/// two mounting holes, sampled to exactly `points` points.
pub fn synthetic_bracket_cloud(points: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6272_6163); // fixed internal stream
    let holes: [(f64, f64, f64); 2] = [(0.5, 0.5, 0.22), (3.5, 0.5, 0.22)];
    let mut cloud = DMatrix::zeros(points, 3);
    let mut filled = 0;
    while filled < points {
        // union of the long arm (4x1) and the upright arm (1x2 above it)
        let long_area = 4.0;
        let upright_area = 2.0;
        let pick = rng.gen_range(0.0..long_area + upright_area);
        let (x, y) = if pick < long_area {
            (rng.gen_range(0.0..4.0), rng.gen_range(0.0..1.0))
        } else {
            (rng.gen_range(0.0..1.0), rng.gen_range(1.0..3.0))
        };
        if holes
            .iter()
            .any(|&(hx, hy, hr)| (x - hx).powi(2) + (y - hy).powi(2) < hr * hr)
        {
            continue;
        }
        let z = rng.gen_range(0.0..0.1);
        cloud[(filled, 0)] = x;
        cloud[(filled, 1)] = y;
        cloud[(filled, 2)] = z;
        filled += 1;
    }
    cloud
}

/// Load a grayscale base image: PGM (P2 or P5) by extension/magic, or a
/// CSV grid of intensities. Values are normalized to [0, 1] for PGM.
pub fn load_image(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        parse_pgm(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| McuError::BadBaseImage("image file is neither PGM nor CSV".into()))?;
        crate::data::parse_matrix_csv(&text)
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let bad = |msg: &str| McuError::BadBaseImage(format!("malformed PGM: {msg}"));
    let binary = bytes.starts_with(b"P5");

    // header tokens (magic, width, height, maxval) with '#' comments
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 && pos < bytes.len() {
        let b = bytes[pos];
        if b == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            pos += 1;
        } else {
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            tokens.push(std::str::from_utf8(&bytes[start..pos]).unwrap().to_string());
        }
    }
    if tokens.len() < 4 {
        return Err(bad("truncated header"));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: f64 = tokens[3].parse().map_err(|_| bad("bad maxval"))?;
    if width == 0 || height == 0 || maxval <= 0.0 {
        return Err(bad("degenerate dimensions"));
    }

    let mut values = Vec::with_capacity(width * height);
    if binary {
        pos += 1; // single whitespace byte after maxval
        if maxval > 255.0 {
            return Err(bad("16-bit binary PGM unsupported"));
        }
        let data = &bytes[pos..];
        if data.len() < width * height {
            return Err(bad("truncated pixel data"));
        }
        values.extend(data[..width * height].iter().map(|&b| b as f64 / maxval));
    } else {
        let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| bad("non-ASCII pixels"))?;
        for tok in text.split_ascii_whitespace().take(width * height) {
            let v: f64 = tok.parse().map_err(|_| bad("bad pixel value"))?;
            values.push(v / maxval);
        }
        if values.len() != width * height {
            return Err(bad("truncated pixel data"));
        }
    }
    Ok(DMatrix::from_row_slice(height, width, &values))
}

/// Load a whitespace-separated XYZ cloud, one point per line; blank
/// lines and '#' comments are skipped.
pub fn load_xyz(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_ascii_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                McuError::BadBaseCloud(format!("line {}: non-numeric field", lineno + 1))
            })?;
        if fields.len() != 3 {
            return Err(McuError::BadBaseCloud(format!(
                "line {}: expected 3 coordinates, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        rows.push(fields);
    }
    if rows.is_empty() {
        return Err(McuError::BadBaseCloud("empty cloud file".into()));
    }
    let mut cloud = DMatrix::zeros(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        for c in 0..3 {
            cloud[(i, c)] = row[c];
        }
    }
    Ok(cloud)
}

/// Small-instance presets used by tests and quick experiments.
pub fn desk_preset(kind: GeneratorKind, seed: u64) -> GeneratorSpec {
    let mut spec = GeneratorSpec::new(kind, 60, seed);
    match kind {
        GeneratorKind::Swiss => spec.grid = (20, 20),
        GeneratorKind::Penny => {}
        GeneratorKind::Bracket => spec.bracket_points = 2_000,
    }
    spec
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: GeneratorKind,
    pub seed: u64,
    pub sample_count: usize,
    pub ambient_dim: usize,
    pub controls: Vec<[f64; 2]>,
}

impl Manifest {
    pub fn from_run(spec: &GeneratorSpec, dataset: &Dataset) -> Self {
        Self {
            kind: spec.kind,
            seed: spec.seed,
            sample_count: spec.sample_count,
            ambient_dim: dataset.ambient_dim,
            controls: (0..spec.sample_count)
                .map(|i| [spec.controls[(i, 0)], spec.controls[(i, 1)]])
                .collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        write_atomic(path, json.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fixed_spec(kind: GeneratorKind, controls: &[[f64; 2]]) -> GeneratorSpec {
        let n = controls.len();
        let mut spec = GeneratorSpec::new(kind, n, 0);
        spec.controls = DMatrix::from_fn(n, 2, |i, j| controls[i][j]);
        if kind == GeneratorKind::Swiss {
            spec.grid = (8, 8);
        }
        if kind == GeneratorKind::Bracket {
            spec.bracket_points = 200;
        }
        spec
    }

    #[test]
    fn controls_in_range_and_reproducible() {
        let a = draw_controls(50, 7);
        let b = draw_controls(50, 7);
        assert_eq!(a, b);
        for &c in a.iter() {
            assert!((1.0..=10.0).contains(&c));
        }
        let other = draw_controls(50, 8);
        assert_ne!(a, other);
    }

    #[test]
    fn swiss_radial_and_fold_constants() {
        assert_relative_eq!(radial_coefficient(1.0), 6.0, epsilon = 1e-12);
        assert_relative_eq!(radial_coefficient(10.0), 10.0, epsilon = 1e-12);
        assert_relative_eq!(fold_rate(10.0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn swiss_inner_edge_has_zero_angle() {
        let spec = fixed_spec(GeneratorKind::Swiss, &[[3.0, 7.0]]);
        let d = gen_swiss_roll(&spec).unwrap();
        let coeff = radial_coefficient(3.0);
        let plane = d.base_plane.as_ref().unwrap();
        for p in 0..plane.nrows() {
            if (plane[(p, 0)] - 4.0).abs() < 1e-12 {
                assert_relative_eq!(d.y[(0, 3 * p)], coeff * 4.0, epsilon = 1e-10);
                assert_relative_eq!(d.y[(0, 3 * p + 2)], 0.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn swiss_preserves_plane_y() {
        let spec = fixed_spec(GeneratorKind::Swiss, &[[2.0, 9.0], [9.5, 1.5]]);
        let d = gen_swiss_roll(&spec).unwrap();
        let plane = d.base_plane.as_ref().unwrap();
        for s in 0..2 {
            for p in 0..plane.nrows() {
                assert_eq!(d.y[(s, 3 * p + 1)], plane[(p, 1)]);
            }
        }
    }

    #[test]
    fn swiss_sample_matches_formula_oracle() {
        let spec = fixed_spec(GeneratorKind::Swiss, &[[4.0, 6.0]]);
        let d = gen_swiss_roll(&spec).unwrap();
        let plane = d.base_plane.as_ref().unwrap();
        let coeff = 4.0 / 9.0 * 4.0 + 50.0 / 9.0;
        let r = 1.6;
        for p in 0..plane.nrows() {
            let (px, py) = (plane[(p, 0)], plane[(p, 1)]);
            let ang = 2.0 * std::f64::consts::PI * r * (px - 4.0) / 12.0;
            assert_relative_eq!(d.y[(0, 3 * p)], coeff * px * ang.cos(), epsilon = 1e-10);
            assert_relative_eq!(d.y[(0, 3 * p + 1)], py, epsilon = 1e-12);
            assert_relative_eq!(d.y[(0, 3 * p + 2)], coeff * px * ang.sin(), epsilon = 1e-10);
        }
    }

    #[test]
    fn penny_identity_controls_reproduce_base() {
        let base = synthetic_penny_image();
        let spec = fixed_spec(GeneratorKind::Penny, &[[5.0, 5.0]]);
        let d = gen_penny(&spec, &base).unwrap();
        for row in 0..PENNY_SIZE {
            for col in 0..PENNY_SIZE {
                assert_relative_eq!(
                    d.y[(0, row * PENNY_SIZE + col)],
                    base[(row, col)],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn penny_intensity_conserved_under_small_translation() {
        let base = synthetic_penny_image();
        // c1=5: pure translation, well inside the frame
        let spec = fixed_spec(GeneratorKind::Penny, &[[5.0, 7.0], [5.0, 2.0]]);
        let d = gen_penny(&spec, &base).unwrap();
        let base_sum: f64 = base.iter().sum();
        for s in 0..2 {
            let sum: f64 = d.y.row(s).iter().sum();
            assert!(
                (sum - base_sum).abs() / base_sum < 0.02,
                "intensity drifted: {sum} vs {base_sum}"
            );
        }
    }

    #[test]
    fn penny_rotation_moves_the_boss() {
        let base = synthetic_penny_image();
        let spec = fixed_spec(GeneratorKind::Penny, &[[10.0, 5.0]]);
        let d = gen_penny(&spec, &base).unwrap();
        let mut changed = 0;
        for row in 0..PENNY_SIZE {
            for col in 0..PENNY_SIZE {
                if (d.y[(0, row * PENNY_SIZE + col)] - base[(row, col)]).abs() > 0.05 {
                    changed += 1;
                }
            }
        }
        assert!(changed > 50, "rotation by -20 degrees changed only {changed} pixels");
    }

    #[test]
    fn penny_rejects_wrong_size_base() {
        let base = DMatrix::zeros(10, 10);
        let spec = fixed_spec(GeneratorKind::Penny, &[[5.0, 5.0]]);
        assert!(matches!(
            gen_penny(&spec, &base),
            Err(McuError::BadBaseImage(_))
        ));
    }

    #[test]
    fn synthetic_penny_is_rotation_sensitive() {
        let base = synthetic_penny_image();
        // quarter turn: row/col permutation, no interpolation involved
        let l = PENNY_SIZE;
        let rotated = DMatrix::from_fn(l, l, |r, c| base[(c, l - 1 - r)]);
        let moved = base
            .iter()
            .zip(rotated.iter())
            .filter(|(a, b)| (**a - **b).abs() > 0.05)
            .count();
        assert!(
            moved as f64 >= 0.10 * (l * l) as f64,
            "only {moved} pixels moved under a quarter turn"
        );
    }

    #[test]
    fn bracket_pivot_and_identity_branch() {
        assert_relative_eq!(bracket_pivot(10.0), 2.5, epsilon = 1e-12);
        let base = synthetic_bracket_cloud(300);
        let spec = fixed_spec(GeneratorKind::Bracket, &[[7.0, 4.0]]);
        let pivot = bracket_pivot(4.0);
        let d = gen_bracket(&spec, &base).unwrap();
        for p in 0..300 {
            if base[(p, 0)] <= pivot {
                assert_eq!(d.y[(0, 3 * p + 1)], base[(p, 1)]);
            } else {
                let rate = 1.0 + 7.0 / 15.0;
                let expect =
                    base[(p, 1)] + 10.0 * (1.0 - (rate * (base[(p, 0)] - pivot) / 4.0).cos());
                assert_relative_eq!(d.y[(0, 3 * p + 1)], expect, epsilon = 1e-10);
            }
            assert_eq!(d.y[(0, 3 * p)], base[(p, 0)]);
            assert_eq!(d.y[(0, 3 * p + 2)], base[(p, 2)]);
        }
    }

    #[test]
    fn bracket_continuous_at_pivot() {
        // a point a hair past the pivot shifts by O(eps^2)
        let mut base = DMatrix::zeros(1, 3);
        let pivot = bracket_pivot(6.0);
        base[(0, 0)] = pivot + 1e-6;
        base[(0, 1)] = 0.3;
        let spec = fixed_spec(GeneratorKind::Bracket, &[[3.0, 6.0]]);
        let d = gen_bracket(&spec, &base).unwrap();
        assert!((d.y[(0, 1)] - 0.3).abs() < 1e-10);
    }

    #[test]
    fn bracket_mount_region_frozen_across_samples() {
        let base = synthetic_bracket_cloud(400);
        let spec = fixed_spec(
            GeneratorKind::Bracket,
            &[[1.0, 1.0], [10.0, 10.0], [6.0, 3.0]],
        );
        let d = gen_bracket(&spec, &base).unwrap();
        let min_pivot = bracket_pivot(1.0);
        for p in 0..400 {
            if base[(p, 0)] <= min_pivot {
                for s in 1..3 {
                    assert_eq!(d.y[(s, 3 * p + 1)], d.y[(0, 3 * p + 1)]);
                }
            }
        }
    }

    #[test]
    fn synthetic_assets_deterministic() {
        assert_eq!(synthetic_penny_image(), synthetic_penny_image());
        let a = synthetic_bracket_cloud(BRACKET_POINTS);
        assert_eq!(a.nrows(), BRACKET_POINTS);
        assert_eq!(a, synthetic_bracket_cloud(BRACKET_POINTS));
        // all points inside the L footprint
        for p in 0..a.nrows() {
            let (x, y) = (a[(p, 0)], a[(p, 1)]);
            let in_long = (0.0..4.0).contains(&x) && (0.0..1.0).contains(&y);
            let in_upright = (0.0..1.0).contains(&x) && (1.0..3.0).contains(&y);
            assert!(in_long || in_upright);
        }
    }

    #[test]
    fn pgm_round_trip_ascii_and_binary() {
        let dir = tempfile::tempdir().unwrap();
        let ascii = dir.path().join("a.pgm");
        std::fs::write(&ascii, "P2\n# comment\n3 2\n255\n0 128 255\n64 32 16\n").unwrap();
        let img = load_image(&ascii).unwrap();
        assert_eq!(img.nrows(), 2);
        assert_eq!(img.ncols(), 3);
        assert_relative_eq!(img[(0, 1)], 128.0 / 255.0, epsilon = 1e-12);
        assert_relative_eq!(img[(1, 2)], 16.0 / 255.0, epsilon = 1e-12);

        let binary = dir.path().join("b.pgm");
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 64, 32, 16]);
        std::fs::write(&binary, bytes).unwrap();
        let img2 = load_image(&binary).unwrap();
        assert_eq!(img, img2);
    }

    #[test]
    fn xyz_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.xyz");
        std::fs::write(&path, "# header\n0 1 2\n3.5 -1 0.25\n\n").unwrap();
        let cloud = load_xyz(&path).unwrap();
        assert_eq!(cloud.nrows(), 2);
        assert_eq!(cloud[(1, 0)], 3.5);

        std::fs::write(&path, "1 2\n").unwrap();
        assert!(matches!(load_xyz(&path), Err(McuError::BadBaseCloud(_))));
    }

    #[test]
    fn generate_dispatch_and_manifest() {
        let spec = desk_preset(GeneratorKind::Swiss, 11);
        let d = generate(&spec).unwrap();
        assert_eq!(d.x.nrows(), 60);
        assert_eq!(d.y.ncols(), 3 * 20 * 20);
        let d2 = generate(&spec).unwrap();
        assert_eq!(d.y, d2.y);

        let manifest = Manifest::from_run(&spec, &d);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        manifest.write(&path).unwrap();
        let back: Manifest =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back.seed, 11);
        assert_eq!(back.controls.len(), 60);
        assert_eq!(back.kind, GeneratorKind::Swiss);
    }
}
