//! The mobility rate matrix `Q`, its eigenstructure, the two-sided
//! semigroup `P_t = e^{tQ}` and the mixing constants `(B, eta)`.
//!
//! All downstream machinery (flows, harmonic functions, experiment
//! schedules) reads from the immutable [`SpectralData`] built here.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lapack;

/// Relative tolerance on eigen-residuals `||Q w - theta w||`.
const EIGEN_RESIDUAL_TOL: f64 = 1e-10;
/// Condition number gate for the eigenvector matrix.
const COND_GATE: f64 = 1e8;
/// Imaginary parts below this are discarded when realifying results.
const IMAG_TOL: f64 = 1e-10;
/// Absolute tolerance on generator row sums.
const ROW_SUM_TOL: f64 = 1e-12;

/// A validated conservative rate matrix: nonnegative off-diagonal,
/// zero row sums, strongly connected support graph.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    q: Array2<f64>,
}

impl RateMatrix {
    /// Validate a full `n x n` generator.
    pub fn new(q: Array2<f64>) -> Result<Self> {
        let n = q.nrows();
        if n != q.ncols() || n < 2 {
            return Err(Error::TooSmall(n));
        }
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let v = q[[i, j]];
                if i != j && v < 0.0 {
                    return Err(Error::NegativeOffDiagonal { i, j, value: v });
                }
                sum += v;
            }
            if sum.abs() > ROW_SUM_TOL {
                return Err(Error::RowSumViolation { row: i, sum });
            }
        }
        if !strongly_connected(&q) {
            return Err(Error::NotIrreducible);
        }
        Ok(Self { q })
    }

    /// Build from row-major off-diagonal rates, recomputing each diagonal
    /// entry as the negative off-diagonal row sum. This is the config-file
    /// entry point where the diagonal may be left as zero.
    pub fn with_filled_diagonal(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::TooSmall(n));
        }
        let mut q = Array2::zeros((n, n));
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                if i != j {
                    q[[i, j]] = rows[i][j];
                    sum += rows[i][j];
                }
            }
            q[[i, i]] = -sum;
        }
        Self::new(q)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.q
    }
}

/// Strong connectivity of the directed graph on edges `q_ij > 0`:
/// forward and backward reachability from node 0.
fn strongly_connected(q: &Array2<f64>) -> bool {
    let n = q.nrows();
    let reach = |transpose: bool| -> bool {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if transpose { q[[j, i]] } else { q[[i, j]] };
                if i != j && w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    reach(false) && reach(true)
}

/// Eigenstructure of a validated rate matrix, plus the derived stationary
/// law, trace parameter, spectral gap and certified mixing prefactor.
///
/// Eigenpairs are ordered with the null eigenvalue last and its
/// eigenvector normalized to the all-ones vector; conjugate pairs are
/// adjacent. Immutable after construction.
#[derive(Debug, Clone)]
pub struct SpectralData {
    q: Array2<f64>,
    /// Eigenvalues, `theta[n-1] = 0`.
    theta_j: Vec<Complex64>,
    /// Eigenvector matrix (columns), last column all ones.
    omega: Array2<Complex64>,
    omega_inv: Array2<Complex64>,
    pi: Vec<f64>,
    /// trace(-Q)
    theta: f64,
    /// spectral gap: min over j < n of -Re(theta_j)
    eta: f64,
    /// grid-certified mixing prefactor
    b_mix: f64,
}

impl SpectralData {
    /// Eigendecompose and validate a rate matrix.
    pub fn validate(q: &RateMatrix) -> Result<Self> {
        let n = q.n();
        let qm = q.entries().clone();
        let (vals, vecs) =
            lapack::eig(&qm).ok_or_else(|| Error::SpectralFailure("dgeev failed".into()))?;

        // Locate the null eigenvalue (largest real part for a generator).
        let zero_idx = (0..n)
            .max_by(|&a, &b| vals[a].re.partial_cmp(&vals[b].re).unwrap())
            .unwrap();
        let scale = qm.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        if vals[zero_idx].norm() > 1e-8 * scale {
            return Err(Error::SpectralFailure(format!(
                "no eigenvalue near zero (closest {:?})",
                vals[zero_idx]
            )));
        }

        // Order: nonzero eigenvalues first (descending real part, conjugate
        // pairs adjacent with positive imaginary part first), zero last.
        let mut order: Vec<usize> = (0..n).filter(|&j| j != zero_idx).collect();
        order.sort_by(|&a, &b| {
            vals[b]
                .re
                .partial_cmp(&vals[a].re)
                .unwrap()
                .then(vals[a].im.abs().partial_cmp(&vals[b].im.abs()).unwrap())
                .then(vals[b].im.partial_cmp(&vals[a].im).unwrap())
        });
        order.push(zero_idx);

        let mut theta_j: Vec<Complex64> = order.iter().map(|&j| vals[j]).collect();
        theta_j[n - 1] = Complex64::new(0.0, 0.0);
        for th in theta_j.iter().take(n - 1) {
            if th.re >= 0.0 {
                return Err(Error::SpectralFailure(format!(
                    "nonzero eigenvalue {th} with nonnegative real part"
                )));
            }
        }

        let mut omega = Array2::<Complex64>::zeros((n, n));
        for (col, &j) in order.iter().enumerate() {
            for i in 0..n {
                omega[[i, col]] = vecs[[i, j]];
            }
        }
        // The null eigenvector of a generator is the all-ones vector.
        for i in 0..n {
            omega[[i, n - 1]] = Complex64::new(1.0, 0.0);
        }

        let omega_inv = invert_complex(&omega)
            .ok_or_else(|| Error::SpectralFailure("eigenvector matrix is singular".into()))?;
        let cond = inf_norm(&omega) * inf_norm(&omega_inv);
        if cond > COND_GATE {
            return Err(Error::NotDiagonalizable { cond });
        }

        // Eigen-residual gate.
        for j in 0..n {
            let mut res: f64 = 0.0;
            let mut nrm: f64 = 0.0;
            for i in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += qm[[i, k]] * omega[[k, j]];
                }
                res = res.max((acc - theta_j[j] * omega[[i, j]]).norm());
                nrm = nrm.max(omega[[i, j]].norm());
            }
            if res > EIGEN_RESIDUAL_TOL * nrm * scale.max(1.0) {
                return Err(Error::SpectralFailure(format!(
                    "eigen-residual {res:e} above tolerance for eigenvalue {}",
                    theta_j[j]
                )));
            }
        }

        let pi = stationary_distribution(&qm)?;
        let theta: f64 = -(0..n).map(|i| qm[[i, i]]).sum::<f64>();
        let eta = theta_j
            .iter()
            .take(n - 1)
            .map(|th| -th.re)
            .fold(f64::INFINITY, f64::min);

        let mut data = Self {
            q: qm,
            theta_j,
            omega,
            omega_inv,
            pi,
            theta,
            eta,
            b_mix: 0.0,
        };
        data.b_mix = data.certify_mixing_prefactor();
        Ok(data)
    }

    /// `max_{i,j} |P_t(i,j) - pi_j| e^{eta t}` over a grid of `[0, 20/eta]`,
    /// inflated by a 10% margin.
    fn certify_mixing_prefactor(&self) -> f64 {
        let grid = 201;
        let t_max = 20.0 / self.eta;
        let mut b: f64 = 0.0;
        for k in 0..grid {
            let t = t_max * k as f64 / (grid - 1) as f64;
            let p = self.semigroup_unchecked(t);
            let mut dev: f64 = 0.0;
            for i in 0..self.n() {
                for j in 0..self.n() {
                    dev = dev.max((p[[i, j]] - self.pi[j]).abs());
                }
            }
            b = b.max(dev * (self.eta * t).exp());
        }
        b * 1.1
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn rate_matrix(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.theta_j
    }

    pub fn eigenvectors(&self) -> &Array2<Complex64> {
        &self.omega
    }

    pub fn eigenvectors_inv(&self) -> &Array2<Complex64> {
        &self.omega_inv
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// trace(-Q)
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Spectral gap.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Certified mixing constants `(B, eta)` with
    /// `max_{i,j} |P_t(i,j) - pi_j| <= B e^{-eta t}` on the certification grid.
    pub fn mixing_constants(&self) -> (f64, f64) {
        (self.b_mix, self.eta)
    }

    /// `P_t = omega diag(e^{theta_j t}) omega^{-1}` for any real `t`
    /// (negative `t` gives the group inverse). Errors if conjugate-pair
    /// cancellation leaves an imaginary residue above tolerance.
    pub fn semigroup(&self, t: f64) -> Result<Array2<f64>> {
        let n = self.n();
        let mut max_imag: f64 = 0.0;
        let mut out = Array2::zeros((n, n));
        let exps: Vec<Complex64> = self.theta_j.iter().map(|th| (th * t).exp()).collect();
        let mut scale: f64 = 1.0;
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += self.omega[[i, k]] * exps[k] * self.omega_inv[[k, j]];
                }
                out[[i, j]] = acc.re;
                max_imag = max_imag.max(acc.im.abs());
                scale = scale.max(acc.re.abs());
            }
        }
        if max_imag > IMAG_TOL * scale {
            return Err(Error::ImaginaryResidue { max: max_imag });
        }
        Ok(out)
    }

    fn semigroup_unchecked(&self, t: f64) -> Array2<f64> {
        self.semigroup(t).expect("imaginary residue in semigroup")
    }

    /// Coordinates of `v` in the eigenbasis: `omega^{-1} v`.
    pub fn eigen_coords(&self, v: &[f64]) -> Vec<Complex64> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).map(|k| self.omega_inv[[i, k]] * v[k]).sum())
            .collect()
    }

    /// `P_t v` as a real vector (imaginary residue discarded after the
    /// tolerance check).
    pub fn propagate(&self, v: &[f64], t: f64) -> Result<Vec<f64>> {
        let coords = self.eigen_coords(v);
        self.from_eigen_coords_at(&coords, t)
    }

    /// Reassemble `omega diag(e^{theta_j t}) c` from eigen-coordinates `c`.
    pub fn from_eigen_coords_at(&self, coords: &[Complex64], t: f64) -> Result<Vec<f64>> {
        let n = self.n();
        let exps: Vec<Complex64> = self.theta_j.iter().map(|th| (th * t).exp()).collect();
        let mut out = vec![0.0; n];
        let mut max_imag: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += self.omega[[i, k]] * exps[k] * coords[k];
            }
            out[i] = acc.re;
            max_imag = max_imag.max(acc.im.abs());
            scale = scale.max(acc.re.abs());
        }
        if max_imag > IMAG_TOL * scale {
            return Err(Error::ImaginaryResidue { max: max_imag });
        }
        Ok(out)
    }

    /// Row-vector action `rho P_t` (distribution evolution).
    pub fn propagate_row(&self, rho: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = self.n();
        // (rho P_t)_j = sum_k (rho omega)_k e^{theta_k t} (omega^{-1})_{k j}
        let d: Vec<Complex64> = (0..n)
            .map(|k| (0..n).map(|i| rho[i] * self.omega[[i, k]]).sum())
            .collect();
        let exps: Vec<Complex64> = self.theta_j.iter().map(|th| (th * t).exp()).collect();
        let mut out = vec![0.0; n];
        let mut max_imag: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                acc += d[k] * exps[k] * self.omega_inv[[k, j]];
            }
            out[j] = acc.re;
            max_imag = max_imag.max(acc.im.abs());
            scale = scale.max(acc.re.abs());
        }
        if max_imag > IMAG_TOL * scale {
            return Err(Error::ImaginaryResidue { max: max_imag });
        }
        Ok(out)
    }
}

/// Solve `pi Q = 0`, `sum pi = 1` by replacing the first column equation
/// with the normalization constraint.
fn stationary_distribution(q: &Array2<f64>) -> Result<Vec<f64>> {
    let n = q.nrows();
    // System M pi = b with M = Q^T except row 0 = ones, b = e_0.
    let mut m = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = if i == 0 { 1.0 } else { q[[j, i]] };
        }
    }
    let mut b = vec![0.0; n];
    b[0] = 1.0;
    let pi = solve_real(&mut m, &mut b)
        .ok_or_else(|| Error::SpectralFailure("singular stationary system".into()))?;
    if pi.iter().any(|&p| p <= 0.0) {
        return Err(Error::SpectralFailure(
            "stationary distribution has a nonpositive coordinate".into(),
        ));
    }
    let s: f64 = pi.iter().sum();
    Ok(pi.iter().map(|p| p / s).collect())
}

/// Gaussian elimination with partial pivoting; overwrites its arguments.
fn solve_real(m: &mut Array2<f64>, b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &c| {
            m[[a, col]]
                .abs()
                .partial_cmp(&m[[c, col]].abs())
                .unwrap()
        })?;
        if m[[piv, col]].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                let tmp = m[[col, j]];
                m[[col, j]] = m[[piv, j]];
                m[[piv, j]] = tmp;
            }
            b.swap(col, piv);
        }
        for row in col + 1..n {
            let f = m[[row, col]] / m[[col, col]];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[[row, j]] -= f * m[[col, j]];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= m[[row, j]] * x[j];
        }
        x[row] = acc / m[[row, row]];
    }
    Some(x)
}

/// Gauss-Jordan inverse of a small complex matrix.
fn invert_complex(a: &Array2<Complex64>) -> Option<Array2<Complex64>> {
    let n = a.nrows();
    let mut work = a.clone();
    let mut inv = Array2::<Complex64>::eye(n);
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| {
            work[[x, col]]
                .norm()
                .partial_cmp(&work[[y, col]].norm())
                .unwrap()
        })?;
        if work[[piv, col]].norm() < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                work.swap([col, j], [piv, j]);
                inv.swap([col, j], [piv, j]);
            }
        }
        let d = work[[col, col]];
        for j in 0..n {
            work[[col, j]] /= d;
            inv[[col, j]] /= d;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = work[[row, col]];
            if f.norm() == 0.0 {
                continue;
            }
            for j in 0..n {
                let w = work[[col, j]];
                let v = inv[[col, j]];
                work[[row, j]] -= f * w;
                inv[[row, j]] -= f * v;
            }
        }
    }
    Some(inv)
}

fn inf_norm(a: &Array2<Complex64>) -> f64 {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[[i, j]].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}
