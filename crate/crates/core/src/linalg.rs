//! Dense symmetric-matrix statistics: streaming covariance accumulation,
//! entrywise L1 norm and symmetric eigen-spectra.
//!
//! Covariances use the population convention (divide by `n`). A sample of
//! zero or one rows has the zero matrix as its covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Running count, mean and centered co-moment of a stream of `m`-wide rows.
///
/// Batches are folded in with the pairwise merge update, so accumulators
/// built on different threads over disjoint row sets can be combined with
/// [`CovarianceAccumulator::merge`].
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    n: usize,
    mean: DVector<f64>,
    comoment: DMatrix<f64>,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("accumulator needs at least one neuron".into()));
        }
        Ok(Self {
            n: 0,
            mean: DVector::zeros(dim),
            comoment: DMatrix::zeros(dim, dim),
        })
    }

    /// Builds an accumulator directly from a set of rows (two-pass).
    pub fn from_rows<'a, I>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let mut acc = Self::new(dim)?;
        if rows.is_empty() {
            return Ok(acc);
        }
        for row in &rows {
            check_width(dim, row.len())?;
        }
        let k = rows.len() as f64;
        for row in &rows {
            for (m, &x) in acc.mean.iter_mut().zip(row.iter()) {
                *m += x;
            }
        }
        acc.mean /= k;
        let mut centered = vec![0.0; dim];
        for row in &rows {
            for (c, (&x, &m)) in centered.iter_mut().zip(row.iter().zip(acc.mean.iter())) {
                *c = x - m;
            }
            for i in 0..dim {
                let ci = centered[i];
                for (j, &cj) in centered.iter().enumerate().skip(i) {
                    acc.comoment[(i, j)] += ci * cj;
                }
            }
        }
        mirror_upper(&mut acc.comoment);
        acc.n = rows.len();
        Ok(acc)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of committed rows.
    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn comoment(&self) -> &DMatrix<f64> {
        &self.comoment
    }

    /// Commits a batch of rows.
    pub fn update<'a, I>(&mut self, rows: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let batch = Self::from_rows(self.dim(), rows)?;
        self.merge(&batch)
    }

    /// Commits the rows of a `k × m` matrix.
    pub fn update_matrix(&mut self, rows: &DMatrix<f64>) -> Result<()> {
        check_width(self.dim(), rows.ncols())?;
        let owned: Vec<Vec<f64>> = rows.row_iter().map(|r| r.iter().copied().collect()).collect();
        self.update(owned.iter().map(Vec::as_slice))
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        self.update(std::iter::once(row))
    }

    /// Folds `other` into `self` as if its rows had been committed here.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "cannot merge accumulators of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            self.clone_from(other);
            return Ok(());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let total = na + nb;
        let delta = &other.mean - &self.mean;
        let weight = na * nb / total;
        let dim = self.dim();
        for i in 0..dim {
            for j in i..dim {
                self.comoment[(i, j)] += other.comoment[(i, j)] + delta[i] * delta[j] * weight;
            }
        }
        mirror_upper(&mut self.comoment);
        self.mean += delta * (nb / total);
        self.n += other.n;
        Ok(())
    }

    /// Returns the accumulator of the concatenated row sets.
    pub fn merged(a: &Self, b: &Self) -> Result<Self> {
        let mut out = a.clone();
        out.merge(b)?;
        Ok(out)
    }

    /// Population covariance `comoment / n`; zero for fewer than two rows.
    pub fn covariance(&self) -> DMatrix<f64> {
        if self.n < 2 {
            return DMatrix::zeros(self.dim(), self.dim());
        }
        &self.comoment / self.n as f64
    }
}

fn check_width(dim: usize, width: usize) -> Result<()> {
    if dim != width {
        return Err(Error::Dimension(format!("row has width {width}, expected {dim}")));
    }
    Ok(())
}

fn mirror_upper(m: &mut DMatrix<f64>) {
    let dim = m.nrows();
    for i in 0..dim {
        for j in (i + 1)..dim {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// Sum of absolute values of all entries.
pub fn l1_norm(m: &DMatrix<f64>) -> Result<f64> {
    let mut sum = 0.0;
    for &x in m.iter() {
        if !x.is_finite() {
            return Err(Error::Numeric(format!("non-finite matrix entry {x}")));
        }
        sum += x.abs();
    }
    Ok(sum)
}

/// Eigen-spectrum of a symmetric matrix together with the scalar scores
/// derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    /// Eigenvalues, largest first.
    pub eigenvalues: Vec<f64>,
    /// `sum(ln(max(lambda_i, ridge)))`.
    pub log_determinant: f64,
    pub trace: f64,
    /// Largest eigenvalue.
    pub spectral_norm: f64,
    pub ridge: f64,
    /// Some eigenvalue fell below the ridge and was clamped.
    pub degenerate: bool,
}

/// Default log-determinant floor: `1e-8 * mean(diag) + 1e-30`.
pub fn default_ridge(sigma: &DMatrix<f64>) -> f64 {
    let dim = sigma.nrows().max(1) as f64;
    1e-8 * (sigma.trace() / dim) + 1e-30
}

pub fn spectral_summary(sigma: &DMatrix<f64>, ridge: f64) -> Result<SpectralSummary> {
    if !sigma.is_square() || sigma.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "expected a non-empty square matrix, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Contract(format!("ridge must be >= 0, got {ridge}")));
    }
    let scale = sigma.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    if !scale.is_finite() {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    let dim = sigma.nrows();
    for i in 0..dim {
        for j in (i + 1)..dim {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::Contract(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    sigma[(i, j)],
                    sigma[(j, i)]
                )));
            }
        }
    }

    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sigma.clone()).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));

    let mut degenerate = false;
    let log_determinant = eigenvalues
        .iter()
        .map(|&l| {
            if l < ridge || l <= 0.0 {
                degenerate = true;
            }
            l.max(ridge).ln()
        })
        .sum();

    Ok(SpectralSummary {
        spectral_norm: eigenvalues[0],
        trace: sigma.trace(),
        log_determinant,
        eigenvalues,
        ridge,
        degenerate,
    })
}
