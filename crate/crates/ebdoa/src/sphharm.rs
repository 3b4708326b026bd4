//! Real spherical harmonics, manifold vectors, the output direction grid, and
//! angular geometry.
//!
//! Conventions used throughout the crate:
//!
//! * Harmonics are real, fully orthonormalized (N3D) and carry no
//!   Condon-Shortley phase, so the addition theorem reads
//!   `sum_m Y_n^m(dir)^2 = (2n+1)/(4*pi)` for every degree `n`.
//! * Channels are ACN ordered: channel `n*(n+1)+m` holds `Y_n^m`.
//! * Azimuth is measured in degrees in `[-180, 180)`, elevation in degrees in
//!   `[-90, 90]` from the horizontal plane (`+90` is straight up).

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Largest harmonic order the crate evaluates.
pub const MAX_ORDER: usize = 8;

/// Number of harmonic channels for a given order.
pub fn channel_count(order: usize) -> usize {
    (order + 1) * (order + 1)
}

/// ACN channel index of degree `n`, order `m`.
pub fn acn_index(n: usize, m: i32) -> usize {
    ((n * (n + 1)) as i64 + m as i64) as usize
}

/// Wrap an azimuth in degrees into `[-180, 180)`.
pub fn wrap_azimuth(az_deg: f64) -> f64 {
    let w = (az_deg + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can return exactly 360.0 for inputs just below a wrap point
    if w >= 180.0 { w - 360.0 } else { w }
}

/// A direction on the unit sphere, stored as azimuth/elevation in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    az: f64,
    el: f64,
}

impl Direction {
    /// Azimuth is wrapped into `[-180, 180)`; elevation outside `[-90, 90]`
    /// (or any non-finite input) is rejected.
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        if !azimuth_deg.is_finite() || !elevation_deg.is_finite() {
            return Err(Error::invalid("direction angles must be finite"));
        }
        if !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(Error::invalid(format!(
                "elevation {elevation_deg} deg outside [-90, 90]"
            )));
        }
        Ok(Self {
            az: wrap_azimuth(azimuth_deg),
            el: elevation_deg,
        })
    }

    pub fn azimuth(&self) -> f64 {
        self.az
    }

    pub fn elevation(&self) -> f64 {
        self.el
    }

    /// Unit vector (x, y, z) with x toward azimuth 0, z up.
    pub fn to_unit_vector(&self) -> [f64; 3] {
        let az = self.az.to_radians();
        let el = self.el.to_radians();
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    }

    /// Direction of a (non-zero) Cartesian offset vector.
    pub fn from_vector(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::invalid("cannot take the direction of a zero vector"));
        }
        let az = v[1].atan2(v[0]).to_degrees();
        let el = v[2].atan2(v[0].hypot(v[1])).to_degrees();
        Direction::new(az, el)
    }
}

/// Great-circle central angle between two directions, in degrees.
///
/// Spherical law of cosines with the argument clamped into the valid
/// `acos` domain; identical inputs short-circuit to exactly zero (the
/// clamped formula would amplify roundoff to ~1e-7 degrees there).
pub fn angular_distance(a: Direction, b: Direction) -> f64 {
    if a.az == b.az && a.el == b.el {
        return 0.0;
    }
    let (ea, eb) = (a.el.to_radians(), b.el.to_radians());
    let daz = (a.az - b.az).to_radians();
    let c = ea.sin() * eb.sin() + ea.cos() * eb.cos() * daz.cos();
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Associated Legendre function `P_n^m(x)` without the Condon-Shortley phase,
/// via the standard stable recurrences.
fn assoc_legendre(n: usize, m: usize, x: f64) -> f64 {
    debug_assert!(m <= n);
    // P_m^m = (2m-1)!! (1-x^2)^(m/2)
    let mut pmm = 1.0;
    if m > 0 {
        let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= fact * somx2;
            fact += 2.0;
        }
    }
    if n == m {
        return pmm;
    }
    // P_{m+1}^m = x (2m+1) P_m^m
    let mut pm1 = x * (2 * m + 1) as f64 * pmm;
    if n == m + 1 {
        return pm1;
    }
    let mut pm2 = pmm;
    let mut p = 0.0;
    for k in (m + 2)..=n {
        p = ((2 * k - 1) as f64 * x * pm1 - (k + m - 1) as f64 * pm2) / (k - m) as f64;
        pm2 = pm1;
        pm1 = p;
    }
    p
}

/// N3D normalization constant `sqrt((2n+1)/(4 pi) * (n-m)!/(n+m)!)`.
fn n3d_norm(n: usize, m: usize) -> f64 {
    let mut ratio = 1.0;
    for k in (n - m + 1)..=(n + m) {
        ratio /= k as f64;
    }
    ((2 * n + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

fn sh_unchecked(n: usize, m: i32, dir: Direction) -> f64 {
    let x = dir.el.to_radians().sin();
    let ma = m.unsigned_abs() as usize;
    let p = assoc_legendre(n, ma, x) * n3d_norm(n, ma);
    let az = dir.az.to_radians();
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => p,
        std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * p * (m as f64 * az).cos(),
        std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * p * (ma as f64 * az).sin(),
    }
}

/// Real N3D spherical harmonic `Y_n^m` evaluated at `dir`.
pub fn real_sh(n: usize, m: i32, dir: Direction) -> Result<f64> {
    if m.unsigned_abs() as usize > n {
        return Err(Error::invalid(format!("harmonic order |{m}| exceeds degree {n}")));
    }
    if n > MAX_ORDER {
        return Err(Error::invalid(format!("degree {n} exceeds cap {MAX_ORDER}")));
    }
    Ok(sh_unchecked(n, m, dir))
}

/// All harmonics up to a given order, in ACN order.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldVector {
    order: usize,
    values: Vec<f64>,
}

impl ManifoldVector {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Frequency-independent steering vector: `Y_n^m(dir)` for all `n <= order`.
pub fn manifold_vector(dir: Direction, order: usize) -> Result<ManifoldVector> {
    if order > MAX_ORDER {
        return Err(Error::invalid(format!("order {order} exceeds cap {MAX_ORDER}")));
    }
    let mut values = Vec::with_capacity(channel_count(order));
    for n in 0..=order {
        for m in -(n as i32)..=(n as i32) {
            values.push(sh_unchecked(n, m, dir));
        }
    }
    Ok(ManifoldVector { order, values })
}

/// Geometry of the rectangular output grid over elevation x azimuth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub el_bins: usize,
    pub az_bins: usize,
    pub res_deg: f64,
}

impl Default for GridSpec {
    /// 3 degrees per bin: 60 elevation rows by 120 azimuth columns.
    fn default() -> Self {
        Self {
            el_bins: 60,
            az_bins: 120,
            res_deg: 3.0,
        }
    }
}

impl GridSpec {
    /// Bins times resolution must tile `[-90, 90] x [-180, 180)` exactly.
    pub fn new(el_bins: usize, az_bins: usize, res_deg: f64) -> Result<Self> {
        let ok = el_bins > 0
            && az_bins > 0
            && (el_bins as f64 * res_deg - 180.0).abs() < 1e-9
            && (az_bins as f64 * res_deg - 360.0).abs() < 1e-9;
        if !ok {
            return Err(Error::invalid(format!(
                "grid {el_bins}x{az_bins} at {res_deg} deg does not tile the sphere"
            )));
        }
        Ok(Self {
            el_bins,
            az_bins,
            res_deg,
        })
    }
}

/// The output grid: bin-center directions in row-major order
/// (elevation rows from -90 up, azimuth columns from -180 east).
#[derive(Debug, Clone)]
pub struct Grid {
    spec: GridSpec,
    dirs: Vec<Direction>,
}

/// Lay out all bin-center directions of `spec`.
///
/// Cell `(i, j)` maps to linear index `i * az_bins + j` and holds elevation
/// `-90 + res*i + res/2`, azimuth `-180 + res*j + res/2`.
pub fn build_grid(spec: GridSpec) -> Grid {
    let mut dirs = Vec::with_capacity(spec.el_bins * spec.az_bins);
    for i in 0..spec.el_bins {
        let el = -90.0 + spec.res_deg * i as f64 + spec.res_deg / 2.0;
        for j in 0..spec.az_bins {
            let az = -180.0 + spec.res_deg * j as f64 + spec.res_deg / 2.0;
            dirs.push(Direction { az, el });
        }
    }
    Grid { spec, dirs }
}

impl Grid {
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn directions(&self) -> &[Direction] {
        &self.dirs
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.spec.el_bins && col < self.spec.az_bins);
        row * self.spec.az_bins + col
    }

    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.spec.az_bins, index % self.spec.az_bins)
    }

    pub fn direction(&self, row: usize, col: usize) -> Direction {
        self.dirs[self.index(row, col)]
    }

    /// Row and column of the bin containing `dir`.
    pub fn nearest_cell(&self, dir: Direction) -> (usize, usize) {
        let res = self.spec.res_deg;
        let row = (((dir.el + 90.0) / res).floor() as isize)
            .clamp(0, self.spec.el_bins as isize - 1) as usize;
        let col = (((dir.az + 180.0) / res).floor() as isize)
            .rem_euclid(self.spec.az_bins as isize) as usize;
        (row, col)
    }
}
