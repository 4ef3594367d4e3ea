//! Centering, pseudoinverse and hat-matrix construction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue cut-off used by [`pinv`].
pub const PINV_REL_TOL: f64 = 1e-12;

/// Asymmetry tolerated by [`pinv`] before rejecting its input.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Baseline covariates: `n` units (rows) by `p` covariates (columns).
///
/// `p = 0` is accepted and represents an experiment with no covariates.
#[derive(Debug, Clone)]
pub struct CovariateMatrix {
    x: DMatrix<f64>,
}

impl CovariateMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 {
            return Err(Error::Input(format!("need at least 2 units, got {n}")));
        }
        if p >= n {
            return Err(Error::Input(format!("need p < n, got p = {p}, n = {n}")));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite covariate at row {}, column {}",
                k % n,
                k / n
            )));
        }
        Ok(Self { x })
    }

    /// Build from row-major data.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Input("ragged covariate rows".into()));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    /// No covariates.
    pub fn empty(n: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(n, 0))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }
}

/// Column-centered covariates and their Gram matrix.
#[derive(Debug, Clone)]
pub struct CenteredDesign {
    /// `X − 𝟙 x̄ᵀ`.
    pub xc: DMatrix<f64>,
    pub xbar: DVector<f64>,
    /// `Σ̂ = X_cᵀ X_c`.
    pub sigma_hat: DMatrix<f64>,
    /// Moore–Penrose inverse of `Σ̂`.
    pub sigma_pinv: DMatrix<f64>,
    pub rank: usize,
}

impl CenteredDesign {
    /// True when `Σ̂` is singular (the pseudoinverse was needed).
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.xc.ncols()
    }
}

/// Center the columns of `X` and form `Σ̂`.
pub fn center_design(x: &CovariateMatrix) -> Result<CenteredDesign> {
    let m = x.matrix();
    let (n, p) = m.shape();
    let xbar = DVector::from_fn(p, |j, _| m.column(j).sum() / n as f64);
    let mut xc = m.clone();
    for j in 0..p {
        let c = xbar[j];
        xc.column_mut(j).iter_mut().for_each(|v| *v -= c);
    }
    let sigma_hat = gram(&xc);
    // Floor the threshold at the raw-data scale so that centering noise on a
    // constant column is not mistaken for signal.
    let floor = PINV_REL_TOL * m.norm_squared();
    let (sigma_pinv, rank) = pinv_with_floor(&sigma_hat, PINV_REL_TOL, floor)?;
    Ok(CenteredDesign {
        xc,
        xbar,
        sigma_hat,
        sigma_pinv,
        rank,
    })
}

/// `AᵀA`, symmetrized.
fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let g = a.transpose() * a;
    (&g + g.transpose()) * 0.5
}

/// Moore–Penrose pseudoinverse of a symmetric matrix by eigendecomposition.
///
/// Eigenvalues with `|λ| ≤ 1e-12 · λ_max` are treated as zero.
pub fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    pinv_with_floor(m, PINV_REL_TOL, 0.0).map(|(p, _)| p)
}

/// Pseudoinverse plus numerical rank. The cut-off is
/// `max(rel_tol · λ_max, abs_floor)`.
pub fn pinv_with_floor(
    m: &DMatrix<f64>,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<(DMatrix<f64>, usize)> {
    let (r, c) = m.shape();
    if r != c {
        return Err(Error::Input(format!("pinv needs a square matrix, got {r}x{c}")));
    }
    if r == 0 {
        return Ok((DMatrix::zeros(0, 0), 0));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("pinv input has non-finite entries".into()));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale.max(1.0) {
        return Err(Error::Input(format!("pinv input is not symmetric (max asymmetry {asym:e})")));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let cut = (rel_tol * lmax).max(abs_floor);
    let mut inv = DMatrix::zeros(r, r);
    let mut rank = 0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > cut && lam != 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / lam;
        }
    }
    let inv = (&inv + inv.transpose()) * 0.5;
    Ok((inv, rank))
}

/// The projection `H = X_c Σ̂⁻ X_cᵀ` with cached leverages and trace.
#[derive(Debug, Clone)]
pub struct HatMatrix {
    pub h: DMatrix<f64>,
    /// Leverages `H_{i,i}`.
    pub diag: Vec<f64>,
    pub trace: f64,
    pub rank: usize,
}

impl HatMatrix {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    /// Convenience: center `x` and build its hat matrix.
    pub fn from_covariates(x: &CovariateMatrix) -> Result<Self> {
        Ok(hat_matrix(&center_design(x)?))
    }

    /// `H v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(v.len(), n);
        let hs = self.h.as_slice();
        // H is symmetric, so column j doubles as row j.
        (0..n).map(|j| crate::numeric::dot(&hs[j * n..(j + 1) * n], v)).collect()
    }
}

/// Build `H` from a centered design.
pub fn hat_matrix(cd: &CenteredDesign) -> HatMatrix {
    let n = cd.xc.nrows();
    if cd.rank == 0 {
        return HatMatrix {
            h: DMatrix::zeros(n, n),
            diag: vec![0.0; n],
            trace: 0.0,
            rank: 0,
        };
    }
    let left = &cd.xc * &cd.sigma_pinv;
    let h = &left * cd.xc.transpose();
    let h = (&h + h.transpose()) * 0.5;
    let diag: Vec<f64> = (0..n).map(|i| h[(i, i)]).collect();
    let trace = diag.iter().sum();
    HatMatrix {
        h,
        diag,
        trace,
        rank: cd.rank,
    }
}
