//! Eigenbeam-domain processing: covariance estimation from ambisonic
//! frames and the classical EB-MVDR and EB-MUSIC spatial spectra.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::roomsim::HoaFrame;
use crate::sphharm::{Grid, channel_count, manifold_vector};
use crate::sps::{SpsGrid, SpsKind};

/// Default relative diagonal loading applied before inversion.
pub const DEFAULT_LOADING: f64 = 1e-6;

/// Additive floor that keeps the MUSIC spectrum finite when a steering
/// vector lies exactly in the signal subspace.
pub const MUSIC_FLOOR: f64 = 1e-12;

/// A real symmetric covariance matrix of ambisonic channel signals.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    order: usize,
    values: DMatrix<f64>,
}

impl CovarianceMatrix {
    /// Wraps a matrix, checking that it is square with the channel count of
    /// `order`, finite, and symmetric to within `1e-12` relative.
    pub fn new(order: usize, values: DMatrix<f64>) -> Result<Self> {
        let m = channel_count(order);
        if values.nrows() != m || values.ncols() != m {
            return Err(Error::invalid(format!(
                "covariance for order {order} must be {m}x{m}, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance contains non-finite values"));
        }
        let scale = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..m {
            for j in i + 1..m {
                if (values[(i, j)] - values[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::invalid(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { order, values })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn trace(&self) -> f64 {
        self.values.trace()
    }
}

/// Time-domain covariance `(1/L) B Bᵀ` of a frame's channel signals.
pub fn time_cov(frame: &HoaFrame) -> Result<CovarianceMatrix> {
    let l = frame.len();
    if l == 0 {
        return Err(Error::invalid("cannot estimate covariance from an empty frame"));
    }
    let m = frame.channels();
    let mut values = DMatrix::zeros(m, m);
    for a in 0..m {
        let ca = frame.channel(a);
        for b in a..m {
            let cb = frame.channel(b);
            let dot: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
            let v = dot / l as f64;
            values[(a, b)] = v;
            values[(b, a)] = v;
        }
    }
    CovarianceMatrix::new(frame.order(), values)
}

/// Frequency-smoothed covariance: a full-frame rectangular-window DFT per
/// channel, then the sum of per-bin outer products `Re{B(k) B(k)ᴴ}` over
/// the inclusive bin range, scaled by `1/L²`. Interior bins count twice to
/// stand in for their conjugate-symmetric negative-frequency partners, so
/// the full band `[0, L/2]` reproduces [`time_cov`] by Parseval's identity.
pub fn freq_smoothed_cov(frame: &HoaFrame, band: (usize, usize)) -> Result<CovarianceMatrix> {
    let l = frame.len();
    let (k_low, k_high) = band;
    if k_low > k_high || k_high > l / 2 {
        return Err(Error::invalid(format!(
            "bin range [{k_low}, {k_high}] is not a valid band within [0, {}]",
            l / 2
        )));
    }
    let m = frame.channels();

    let mut planner = rustfft::FftPlanner::new();
    let fft = planner.plan_fft_forward(l);
    let mut spectra: Vec<Vec<Complex<f64>>> = Vec::with_capacity(m);
    for c in 0..m {
        let mut buf: Vec<Complex<f64>> =
            frame.channel(c).iter().map(|&s| Complex::new(s, 0.0)).collect();
        fft.process(&mut buf);
        spectra.push(buf);
    }

    let mut values = DMatrix::zeros(m, m);
    for k in k_low..=k_high {
        let weight = if k == 0 || (l % 2 == 0 && k == l / 2) { 1.0 } else { 2.0 };
        for a in 0..m {
            let xa = spectra[a][k];
            for b in a..m {
                let xb = spectra[b][k];
                // Re{Xa conj(Xb)}
                values[(a, b)] += weight * (xa.re * xb.re + xa.im * xb.im);
            }
        }
    }
    let scale = 1.0 / (l as f64 * l as f64);
    for a in 0..m {
        for b in a..m {
            let v = values[(a, b)] * scale;
            values[(a, b)] = v;
            values[(b, a)] = v;
        }
    }
    CovarianceMatrix::new(frame.order(), values)
}

/// Adds `eps * trace / M` to the diagonal, shifting every eigenvalue up by
/// that amount.
pub fn diag_load(cov: &CovarianceMatrix, eps: f64) -> Result<CovarianceMatrix> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::invalid(format!("diagonal loading must be finite and non-negative, got {eps}")));
    }
    let delta = eps * cov.trace() / cov.dim() as f64;
    let mut values = cov.values.clone();
    for i in 0..cov.dim() {
        values[(i, i)] += delta;
    }
    Ok(CovarianceMatrix { order: cov.order, values })
}

/// Real spherical-harmonic steering vectors for every cell of a grid,
/// precomputed once so repeated spectrum evaluations stay cheap.
#[derive(Debug, Clone)]
pub struct SteeringTable {
    order: usize,
    cells: usize,
    dim: usize,
    values: Vec<f64>,
}

impl SteeringTable {
    pub fn new(grid: &Grid, order: usize) -> Result<Self> {
        let dim = channel_count(order);
        let mut values = Vec::with_capacity(grid.len() * dim);
        for &dir in grid.directions() {
            values.extend_from_slice(manifold_vector(dir, order)?.values());
        }
        Ok(Self { order, cells: grid.len(), dim, values })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// The steering vector of one grid cell, in channel order.
    pub fn vector(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.dim..(cell + 1) * self.dim]
    }
}

fn check_table(cov: &CovarianceMatrix, grid: &Grid, table: &SteeringTable) -> Result<()> {
    if table.order != cov.order || table.cells != grid.len() {
        return Err(Error::invalid("steering table does not match covariance order and grid"));
    }
    Ok(())
}

/// EB-MVDR spatial spectrum: each cell holds `1 / (yᵀ R⁻¹ y)` for its
/// steering vector, with diagonal loading applied internally and the
/// quadratic form evaluated through a Cholesky factorization.
pub fn eb_mvdr_spectrum(cov: &CovarianceMatrix, grid: &Grid) -> Result<SpsGrid> {
    let table = SteeringTable::new(grid, cov.order)?;
    eb_mvdr_spectrum_with_table(cov, grid, &table)
}

/// [`eb_mvdr_spectrum`] with a caller-supplied steering table.
pub fn eb_mvdr_spectrum_with_table(
    cov: &CovarianceMatrix,
    grid: &Grid,
    table: &SteeringTable,
) -> Result<SpsGrid> {
    check_table(cov, grid, table)?;
    let loaded = diag_load(cov, DEFAULT_LOADING)?;
    let chol = nalgebra::Cholesky::new(loaded.values).ok_or_else(|| {
        Error::Numerical("covariance is not positive definite even after diagonal loading".into())
    })?;
    let m = cov.dim();
    // Row-major copy of the lower factor keeps the per-cell forward
    // substitution on contiguous memory.
    let l_factor = chol.l();
    let mut lower = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            lower[i * m + j] = l_factor[(i, j)];
        }
    }

    let mut values = vec![0.0; grid.len()];
    let mut z = vec![0.0; m];
    for (cell, out) in values.iter_mut().enumerate() {
        let y = table.vector(cell);
        // Forward-substitute L z = y; then yᵀ R⁻¹ y = ‖z‖².
        let mut norm_sq = 0.0;
        for i in 0..m {
            let row = &lower[i * m..i * m + i];
            let dot: f64 = row.iter().zip(&z[..i]).map(|(a, b)| a * b).sum();
            let zi = (y[i] - dot) / lower[i * m + i];
            z[i] = zi;
            norm_sq += zi * zi;
        }
        *out = 1.0 / norm_sq;
    }
    SpsGrid::new(grid.spec(), SpsKind::Beamformer, values)
}

/// The default MUSIC noise-subspace split: the direct path plus six
/// first-order reflections per source, capped below the channel count.
pub fn default_music_dimension(num_sources: usize, dim: usize) -> usize {
    (7 * num_sources.max(1)).min(dim - 1)
}

/// EB-MUSIC spatial spectrum: eigendecompose the covariance, take the
/// eigenvectors of the `M - D` smallest eigenvalues as the noise subspace
/// `U_N`, and fill each cell with `1 / (‖U_Nᵀ y‖² + floor)`.
pub fn eb_music_spectrum(cov: &CovarianceMatrix, grid: &Grid, d: usize) -> Result<SpsGrid> {
    let table = SteeringTable::new(grid, cov.order)?;
    eb_music_spectrum_with_table(cov, grid, &table, d)
}

/// [`eb_music_spectrum`] with a caller-supplied steering table.
pub fn eb_music_spectrum_with_table(
    cov: &CovarianceMatrix,
    grid: &Grid,
    table: &SteeringTable,
    d: usize,
) -> Result<SpsGrid> {
    check_table(cov, grid, table)?;
    let m = cov.dim();
    if d == 0 || d >= m {
        return Err(Error::invalid(format!(
            "assumed source count {d} must lie in [1, {}] for {m} channels",
            m - 1
        )));
    }
    let eigen = nalgebra::SymmetricEigen::new(cov.values.clone());
    let mut order_idx: Vec<usize> = (0..m).collect();
    order_idx.sort_by(|&a, &b| eigen.eigenvalues[a].partial_cmp(&eigen.eigenvalues[b]).unwrap());

    // Noise subspace rows, each an eigenvector of one of the M - D smallest
    // eigenvalues.
    let noise_dim = m - d;
    let mut noise = vec![0.0; noise_dim * m];
    for (row, &idx) in order_idx[..noise_dim].iter().enumerate() {
        for i in 0..m {
            noise[row * m + i] = eigen.eigenvectors[(i, idx)];
        }
    }

    let mut values = vec![0.0; grid.len()];
    for (cell, out) in values.iter_mut().enumerate() {
        let y = table.vector(cell);
        let mut s = 0.0;
        for row in 0..noise_dim {
            let u = &noise[row * m..(row + 1) * m];
            let dot: f64 = u.iter().zip(y).map(|(a, b)| a * b).sum();
            s += dot * dot;
        }
        *out = 1.0 / (s + MUSIC_FLOOR);
    }
    SpsGrid::new(grid.spec(), SpsKind::Beamformer, values)
}
