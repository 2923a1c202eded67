//! Flows, space-time harmonic functions, the simplex change of
//! variables and the family of nonnegative local martingales built from
//! them, together with the exit-time deviation bound.
//!
//! Central objects, for a diagonalizable irreducible generator `Q` with
//! stationary law `pi` and semigroup group `(P_t)`:
//!
//! - the flow `phi(v, t) = P_{-t} v`;
//! - the potential `phi0(v)`, the improper integral of
//!   `sum_i (mu_i phi_i/(1+phi_i) - lambda_i phi_i)` over `s <= 0`;
//! - the harmonic family `h_v(t, x) = e^{phi0(P_{-t}v)} prod_i (1 +
//!   phi_i(v,t))^{x_i}`;
//! - the eigen-modulus `psi(v) = prod_{j<n} |(omega^{-1} v)_j|` and the
//!   simplex weights `F(u) = psi(diag(pi)^{-1} u)`,
//!   `G(u) = e^{phi0(diag(pi)^{-1} u - 1)}`;
//! - the local martingale
//!   `J_alpha(t) = e^{-alpha theta t} int_S prod_i (u_i/pi_i)^{X_i(t)}
//!   G(u) F(u)^{alpha-1} du`.

pub mod chart;
pub mod quad;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulator::{simulate_with, RngStream, SimOptions};
use crate::spectral::{RateMatrix, SpectralData};
use crate::state::{chi, entropy_unchecked, NetworkParams, SimplexPoint, State};
use crate::stats::mean_stderr;

pub use chart::SimplexChart;
use quad::{adaptive, gl7_points, graded_cells, integrate_graded, Singularity};

const HYPERPLANE_TOL: f64 = 1e-10;
const POSITIVITY_FLOOR: f64 = 1e-14;
const POTENTIAL_TOL: f64 = 1e-9;

/// `phi(v, t) = P_{-t} v`.
pub fn flow(s: &SpectralData, v: &[f64], t: f64) -> Result<Vec<f64>> {
    s.propagate(v, -t)
}

fn hyperplane_residual(s: &SpectralData, v: &[f64]) -> f64 {
    v.iter().zip(s.pi()).map(|(x, p)| x * p).sum::<f64>().abs()
}

/// Whether `v` lies in the flow domain `D(t)`: `v` in the hyperplane and
/// every coordinate of `1 + phi(v, t)` above a strict-positivity floor.
pub fn in_domain(s: &SpectralData, v: &[f64], t: f64) -> Result<bool> {
    let res = hyperplane_residual(s, v);
    let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if res > HYPERPLANE_TOL * scale {
        return Err(Error::NotInHyperplane(res));
    }
    let w = flow(s, v, t)?;
    Ok(w.iter().all(|&x| 1.0 + x > POSITIVITY_FLOOR))
}

/// Convergent part of the potential primitive for a general admissible
/// `v`, split around its mean along the stationary direction.
///
/// Writing `m = sum_i pi_i v_i` and `w = v - m 1`, the integrand
/// `sum_i (mu_i phi_i/(1+phi_i) - lambda_i phi_i)` of `phi(v, s)` tends
/// to the constant `kappa = mu_tot m/(1+m) - lambda_tot m` as
/// `s -> -infinity`; the difference decays exponentially with the mixing
/// rate. Returns `(int_{-inf}^0 (integrand - kappa) ds, kappa)`.
fn potential_split(
    s: &SpectralData,
    params: &NetworkParams,
    v: &[f64],
) -> Result<(f64, f64)> {
    let n = s.n();
    let pi = s.pi();
    let m: f64 = v.iter().zip(pi).map(|(x, p)| x * p).sum();
    if 1.0 + m <= POSITIVITY_FLOOR {
        return Err(Error::AdmissibilityViolation);
    }
    let kappa = params.mu_total() * m / (1.0 + m) - params.lambda_total() * m;
    let wnorm = v
        .iter()
        .map(|x| (x - m).abs())
        .fold(0.0f64, f64::max);
    let traffic = params.lambda_total() + params.mu_total();
    if wnorm == 0.0 || traffic == 0.0 {
        return Ok((0.0, kappa));
    }
    let (b, eta) = s.mixing_constants();
    let amp = n as f64 * b * wnorm;

    // cutoff: far enough out that ||phi(w, s)|| is well below 1 + m and
    // the analytic tail bound fits under the accuracy target
    let tail_target = 0.1 * POTENTIAL_TOL;
    let mut cutoff = (1.0f64).max((amp * (traffic + 1.0) / (eta * tail_target)).ln() / eta);
    loop {
        let r = amp * (-eta * cutoff).exp();
        if r < 0.5 * (1.0 + m) {
            let rate = params.mu_total() / ((1.0 + m - r) * (1.0 + m)) + params.lambda_total();
            if rate * r / eta <= tail_target {
                break;
            }
        }
        cutoff += 1.0;
    }

    let coords = s.eigen_coords(v);
    let mut fault = false;
    let mut integrand = |t: f64| -> f64 {
        // phi(v, s) = P_{-s} v at s = t <= 0
        let w = match s.from_eigen_coords_at(&coords, -t) {
            Ok(w) => w,
            Err(_) => {
                fault = true;
                return 0.0;
            }
        };
        let mut acc = -kappa;
        for i in 0..n {
            let denom = 1.0 + w[i];
            if denom <= 0.0 {
                fault = true;
                return 0.0;
            }
            acc += params.mu[i] * w[i] / denom - params.lambda[i] * w[i];
        }
        acc
    };
    let (value, err) = adaptive(&mut integrand, -cutoff, 0.0, 0.1 * POTENTIAL_TOL, 48);
    if fault {
        return Err(Error::DomainViolation);
    }
    let achieved = err + tail_target;
    if achieved > 100.0 * POTENTIAL_TOL {
        return Err(Error::QuadratureDivergence {
            requested: POTENTIAL_TOL,
            achieved,
        });
    }
    Ok((value, kappa))
}

/// The potential `phi0(v)` for `v` in `D(0)`: improper integral over
/// `s <= 0` of `sum_i (mu_i phi_i(v,s)/(1 + phi_i(v,s)) - lambda_i
/// phi_i(v,s))`, by adaptive quadrature on a tail-truncated window with
/// the remainder bounded analytically from the mixing estimate.
pub fn potential0(s: &SpectralData, params: &NetworkParams, v: &[f64]) -> Result<f64> {
    if !in_domain(s, v, 0.0)? {
        return Err(Error::PreconditionViolated(
            "potential requires a point of D(0)".into(),
        ));
    }
    Ok(potential_split(s, params, v)?.0)
}

/// The shifted potential `phi0(P_{-t} v)`, defined for `v` in `D(t)`.
pub fn potential(s: &SpectralData, params: &NetworkParams, v: &[f64], t: f64) -> Result<f64> {
    potential0(s, params, &flow(s, v, t)?)
}

/// The space-time harmonic function
/// `h_v(t, x) = e^{varphi(v, t)} prod_i (1 + phi_i(v, t))^{x_i}`,
/// with the primitive `varphi(v, t) = kappa(v) t + phi0-part(P_{-t} v)`
/// (for `v` in the hyperplane this is exactly `phi0(P_{-t} v)`).
pub fn harmonic_h(
    s: &SpectralData,
    params: &NetworkParams,
    v: &[f64],
    t: f64,
    x: &State,
) -> Result<f64> {
    let w = flow(s, v, t)?;
    if w.iter().any(|&c| 1.0 + c <= POSITIVITY_FLOOR) {
        return Err(Error::AdmissibilityViolation);
    }
    let (part, kappa) = potential_split(s, params, &w)?;
    let mut h = (kappa * t + part).exp();
    for (i, &c) in w.iter().enumerate() {
        h *= (1.0 + c).powi(x.0[i] as i32);
    }
    Ok(h)
}

/// Relative harmonicity residual `|dh/dt + Omega h| / |h|` at `(v, t, x)`,
/// with a central finite difference in `t` and the exact generator sum
/// over neighbor states.
pub fn harmonicity_residual(
    s: &SpectralData,
    params: &NetworkParams,
    v: &[f64],
    t: f64,
    x: &State,
    dt: f64,
) -> Result<f64> {
    let n = s.n();
    let w = flow(s, v, t)?;
    if w.iter().any(|&c| 1.0 + c <= POSITIVITY_FLOOR) {
        return Err(Error::AdmissibilityViolation);
    }
    let h = harmonic_h(s, params, v, t, x)?;
    let h_plus = harmonic_h(s, params, v, t + dt, x)?;
    let h_minus = harmonic_h(s, params, v, t - dt, x)?;
    let dh_dt = (h_plus - h_minus) / (2.0 * dt);

    // neighbor values are proportional to h through the factors 1 + w_i
    let q = s.rate_matrix();
    let mut omega_h = 0.0;
    for i in 0..n {
        omega_h += params.lambda[i] * (h * (1.0 + w[i]) - h);
        if x.0[i] > 0 {
            omega_h += params.mu[i] * (h / (1.0 + w[i]) - h);
        }
        for j in 0..n {
            if j != i {
                omega_h +=
                    q[[i, j]] * x.0[i] as f64 * (h * (1.0 + w[j]) / (1.0 + w[i]) - h);
            }
        }
    }
    Ok((dh_dt + omega_h).abs() / h.abs().max(f64::MIN_POSITIVE))
}

/// The eigen-modulus `psi(v)`: product of the complex moduli of the
/// first `n - 1` eigen-coordinates of `v` (the coordinate along the
/// stationary direction is excluded).
pub fn psi(s: &SpectralData, v: &[f64]) -> f64 {
    let c = s.eigen_coords(v);
    c[..s.n() - 1].iter().map(|z| z.norm()).product()
}

fn check_simplex_vector(s: &SpectralData, u: &[f64]) -> Result<()> {
    if u.len() != s.n() || u.iter().any(|&x| x < 0.0) || (u.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidParams(
            "argument must be a probability vector over the nodes".into(),
        ));
    }
    Ok(())
}

/// `F(u) = psi(diag(pi)^{-1} u)` on the closed simplex.
pub fn f_weight(s: &SpectralData, u: &[f64]) -> Result<f64> {
    check_simplex_vector(s, u)?;
    let w: Vec<f64> = u.iter().zip(s.pi()).map(|(x, p)| x / p).collect();
    Ok(psi(s, &w))
}

/// `G(u) = e^{phi0(diag(pi)^{-1} u - 1)}` on the open simplex.
pub fn g_weight(s: &SpectralData, params: &NetworkParams, u: &[f64]) -> Result<f64> {
    check_simplex_vector(s, u)?;
    if u.iter().any(|&x| x <= 0.0) {
        return Err(Error::BoundaryPoint);
    }
    if params.lambda_total() + params.mu_total() == 0.0 {
        return Ok(1.0);
    }
    let mut w: Vec<f64> = u.iter().zip(s.pi()).map(|(x, p)| x / p - 1.0).collect();
    // remove the rounding residue along the stationary direction
    let dot: f64 = w.iter().zip(s.pi()).map(|(x, p)| x * p).sum();
    for c in w.iter_mut() {
        *c -= dot;
    }
    Ok(potential0(s, params, &w)?.exp())
}

/// Affine representation of the non-stationary eigen-coordinates of
/// `diag(pi)^{-1} u_tilde` as functions of the free simplex coordinates:
/// `c_k(u) = b_k + sum_j a_kj u_j` for `k < n - 1`.
struct AffineFactors {
    a: Vec<Vec<Complex64>>,
    b: Vec<Complex64>,
    conjugate_pair: bool,
}

fn affine_factors(s: &SpectralData) -> AffineFactors {
    let n = s.n();
    let pi = s.pi();
    let mut base = vec![0.0; n];
    base[n - 1] = 1.0 / pi[n - 1];
    let b = s.eigen_coords(&base);
    let mut a = Vec::with_capacity(n - 1);
    for j in 0..n - 1 {
        let mut dir = vec![0.0; n];
        dir[j] = 1.0 / pi[j];
        dir[n - 1] = -1.0 / pi[n - 1];
        a.push(s.eigen_coords(&dir));
    }
    // transpose into per-factor rows over j
    let rows: Vec<Vec<Complex64>> = (0..n - 1)
        .map(|k| (0..n - 1).map(|j| a[j][k]).collect())
        .collect();
    let conjugate_pair = n == 3 && s.eigenvalues()[0].im.abs() > 1e-12;
    AffineFactors {
        a: rows,
        b: b[..n - 1].to_vec(),
        conjugate_pair,
    }
}

const COEFF_TINY: f64 = 1e-12;

/// Half-width of the strip excluded around a simple real zero of an
/// affine factor: commensurate with the first graded panel, but never
/// below machine resolution at the point (panels below that would place
/// nodes exactly on the zero).
fn core_width(point: f64, span: f64, alpha: f64, grading: f64, cells: usize) -> f64 {
    if alpha >= 1.0 {
        // the exponent alpha - 1 is nonnegative: no singularity, no core
        return 0.0;
    }
    (span * (0.5 / cells as f64).powf(grading)).max(1e-12 * (1.0 + point.abs()))
}

/// Weight of the virtual node standing in for one excluded side
/// `[u*, u* +/- w]` of a simple real zero. The consumer evaluates the
/// full integrand at the side's midpoint, where the vanishing factor
/// equals `|a| w/2`; since the factor is affine, the exact side mass of
/// `F^{alpha-1}` is `(|a| w/2)^{alpha-1}` times this weight.
fn core_virtual_weight(alpha: f64, w: f64) -> f64 {
    2f64.powf(alpha) * w / (2.0 * alpha)
}

/// Quadrature nodes `(u_tilde, weight)` over the open unit simplex with
/// panel grading toward the zero set of `F^{alpha-1}`. Zeros of real
/// affine factors are excluded inside a tiny core strip whose exact mass
/// is restored by specially weighted midpoint nodes, so the node set
/// integrates `F^{alpha-1} x smooth` accurately even for small `alpha`.
/// Supported for `n <= 3`; larger dimensions fall back to Monte Carlo
/// elsewhere.
pub fn simplex_nodes(
    s: &SpectralData,
    alpha: f64,
    cells: usize,
) -> Result<Vec<(Vec<f64>, f64)>> {
    if alpha <= 0.0 {
        return Err(Error::InvalidParams("alpha must be positive".into()));
    }
    let n = s.n();
    let grading = (1.0 / alpha).max(1.0);
    let fac = affine_factors(s);
    let mut nodes = Vec::new();
    match n {
        2 => {
            let (a, b) = (fac.a[0][0], fac.b[0]);
            let mut sing = Vec::new();
            let mut virt: Vec<(f64, f64)> = Vec::new();
            if a.norm() > COEFF_TINY {
                let root = -b / a;
                if root.im.abs() < 1e-10 && root.re > 0.0 && root.re < 1.0 {
                    let r = root.re;
                    let w = core_width(r, 1.0, alpha, grading, cells);
                    sing.push(Singularity {
                        point: r,
                        grading,
                        core: w,
                    });
                    for (side, limit) in [(-1.0, r), (1.0, 1.0 - r)] {
                        let ww = w.min(limit);
                        if ww > 0.0 {
                            virt.push((r + side * 0.5 * ww, core_virtual_weight(alpha, ww)));
                        }
                    }
                }
            }
            for (p, q) in graded_cells(0.0, 1.0, &sing, cells) {
                push_gl_nodes(&mut nodes, p, q, 1.0, |u| vec![u, 1.0 - u]);
            }
            for (u, w) in virt {
                nodes.push((vec![u, 1.0 - u], w));
            }
        }
        3 => {
            // outer points: panel nodes plus virtual nodes of factors
            // whose zero line is a constant-u1 line
            let outer = outer_singularities(&fac, alpha, grading, cells);
            let mut outer_points: Vec<(f64, f64)> = Vec::new();
            for (p, q) in graded_cells(0.0, 1.0, &outer.marks, cells) {
                outer_points.extend(gl7_points(p, q));
            }
            outer_points.extend(outer.virtuals);
            for (u1, w1) in outer_points {
                let width = 1.0 - u1;
                if width <= 1e-13 || u1 <= 0.0 {
                    continue;
                }
                let inner = inner_singularities(&fac, u1, width, alpha, grading, cells);
                for (pp, qq) in graded_cells(0.0, width, &inner.marks, cells) {
                    push_gl_nodes(&mut nodes, pp, qq, w1, |u2| {
                        vec![u1, u2, 1.0 - u1 - u2]
                    });
                }
                for (u2, w2) in inner.virtuals {
                    nodes.push((vec![u1, u2, 1.0 - u1 - u2], w1 * w2));
                }
            }
        }
        _ => {
            return Err(Error::InvalidParams(
                "tensor quadrature supports n <= 3".into(),
            ))
        }
    }
    Ok(nodes)
}

fn push_gl_nodes<F: Fn(f64) -> Vec<f64>>(
    nodes: &mut Vec<(Vec<f64>, f64)>,
    a: f64,
    b: f64,
    scale: f64,
    lift: F,
) {
    for (x, w) in gl7_points(a, b) {
        nodes.push((lift(x), scale * w));
    }
}

/// Graded-mesh marks for one integration direction plus the virtual
/// `(point, weight)` nodes restoring the excluded core strips.
struct DirectionSingularities {
    marks: Vec<Singularity>,
    virtuals: Vec<(f64, f64)>,
}

fn outer_singularities(
    fac: &AffineFactors,
    alpha: f64,
    grading: f64,
    cells: usize,
) -> DirectionSingularities {
    let mut marks = Vec::new();
    let mut virtuals = Vec::new();
    let mut mark = |x: f64, core: f64| {
        if x.is_finite() && x > 0.0 && x < 1.0 {
            marks.push(Singularity {
                point: x,
                grading,
                core,
            });
        }
    };
    if fac.conjugate_pair {
        // point zero of |c_1|^2: solve Re c = Im c = 0 for (u1, u2);
        // the iterated integral behaves like |u1 - u1*|^{2 alpha - 1}
        // there. The tiny excluded strip is not restored (its mass is
        // O(core^{2 alpha}) of the local contribution).
        let (a1, a2, b) = (fac.a[0][0], fac.a[0][1], fac.b[0]);
        let det = a1.re * a2.im - a1.im * a2.re;
        if det.abs() > COEFF_TINY {
            let u1 = (-b.re * a2.im + b.im * a2.re) / det;
            mark(u1, 1e-12 * (1.0 + u1.abs()));
        }
        return DirectionSingularities { marks, virtuals };
    }
    for k in 0..fac.a.len() {
        let (a1, a2, b) = (fac.a[k][0].re, fac.a[k][1].re, fac.b[k].re);
        if a2.abs() < COEFF_TINY {
            // the factor's zero line is a constant-u1 line: a genuine
            // power singularity of the iterated integral, excluded and
            // restored by virtual outer points
            if a1.abs() > COEFF_TINY {
                let r = -b / a1;
                if r.is_finite() && r > 0.0 && r < 1.0 {
                    let w = core_width(r, 1.0, alpha, grading, cells);
                    mark(r, w);
                    for (side, limit) in [(-1.0, r), (1.0, 1.0 - r)] {
                        let ww = w.min(limit);
                        if ww > 0.0 {
                            virtuals.push((r + side * 0.5 * ww, core_virtual_weight(alpha, ww)));
                        }
                    }
                }
            }
            continue;
        }
        // crossings of the zero line with the triangle edges u2 = 0 and
        // u2 = 1 - u1: the iterated integral stays continuous, the mesh
        // is only graded toward the kink
        if a1.abs() > COEFF_TINY {
            mark(-b / a1, 0.0);
        }
        if (a1 - a2).abs() > COEFF_TINY {
            mark(-(b + a2) / (a1 - a2), 0.0);
        }
    }
    // pairwise intersection of the zero lines
    if fac.a.len() == 2 {
        let d = fac.a[0][0].re * fac.a[1][1].re - fac.a[0][1].re * fac.a[1][0].re;
        if d.abs() > COEFF_TINY {
            let u1 = (-fac.b[0].re * fac.a[1][1].re + fac.b[1].re * fac.a[0][1].re) / d;
            mark(u1, 0.0);
        }
    }
    DirectionSingularities { marks, virtuals }
}

fn inner_singularities(
    fac: &AffineFactors,
    u1: f64,
    width: f64,
    alpha: f64,
    grading: f64,
    cells: usize,
) -> DirectionSingularities {
    let mut marks = Vec::new();
    let mut virtuals = Vec::new();
    let mut zeros: Vec<f64> = Vec::new();
    for k in 0..fac.a.len() {
        let p = fac.b[k] + fac.a[k][0] * u1;
        let a2 = fac.a[k][1];
        if a2.norm() < COEFF_TINY {
            continue;
        }
        if fac.conjugate_pair {
            // minimizer of |p + a2 u2|^2 over real u2: a near-singular
            // peak (no actual zero off the conjugate point)
            let u2 = -(a2.conj() * p).re / a2.norm_sqr();
            if u2.is_finite() {
                marks.push(Singularity {
                    point: u2,
                    grading,
                    core: 1e-12 * (1.0 + u2.abs()),
                });
            }
            break;
        }
        let u2 = -p.re / a2.re;
        if u2.is_finite() {
            zeros.push(u2);
        }
    }
    zeros.sort_by(f64::total_cmp);
    for (idx, &z) in zeros.iter().enumerate() {
        if !(z > 0.0 && z < width) {
            marks.push(Singularity {
                point: z,
                grading,
                core: 0.0,
            });
            continue;
        }
        // two zero lines can cross near this point; keep the cores of
        // neighboring zeros disjoint (the excluded strip is symmetric,
        // so the virtual sides must use the same half-width as the mesh)
        let mut w = core_width(z, width, alpha, grading, cells);
        if idx > 0 {
            w = w.min(0.5 * (z - zeros[idx - 1]));
        }
        if idx + 1 < zeros.len() {
            w = w.min(0.5 * (zeros[idx + 1] - z));
        }
        w = w.max(0.0);
        marks.push(Singularity {
            point: z,
            grading,
            core: w,
        });
        for (side, limit) in [(-1.0, z), (1.0, width - z)] {
            let ww = w.min(limit);
            if ww > 0.0 {
                virtuals.push((z + side * 0.5 * ww, core_virtual_weight(alpha, ww)));
            }
        }
    }
    DirectionSingularities { marks, virtuals }
}

/// One estimate of `alpha^n int_S F^{alpha-1}` with its refinement pair.
#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityEntry {
    pub alpha: f64,
    pub coarse: f64,
    pub fine: f64,
    /// `alpha^n * fine`.
    pub scaled: f64,
    pub rel_change: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityReport {
    pub entries: Vec<IntegrabilityEntry>,
    pub max_scaled: f64,
    /// All entries moved by less than 5% under mesh doubling.
    pub stable: bool,
}

/// Estimate `alpha^n int_S F(u)^{alpha-1} du` over an `alpha` grid, with
/// a 2x mesh refinement as the convergence check.
pub fn integrability_bound(
    s: &SpectralData,
    alphas: &[f64],
    cells: usize,
) -> Result<IntegrabilityReport> {
    let n = s.n();
    let mut entries = Vec::new();
    for &alpha in alphas {
        let eval = |cells: usize| -> Result<f64> {
            let mut acc = 0.0;
            for (u, w) in simplex_nodes(s, alpha, cells)? {
                let f = f_weight(s, &u)?;
                // a node graded toward one zero line can collide, to
                // double rounding, with a different factor's line; F
                // then underflows to 0 although the exact-arithmetic
                // node sits ~1 ulp off it and contributes below
                // rounding. Skip such artifacts instead of raising inf.
                if f < 1e-250 {
                    continue;
                }
                acc += w * f.powf(alpha - 1.0);
            }
            Ok(acc)
        };
        let coarse = eval(cells)?;
        let fine = eval(2 * cells)?;
        let rel_change = (fine - coarse).abs() / fine.abs().max(f64::MIN_POSITIVE);
        entries.push(IntegrabilityEntry {
            alpha,
            coarse,
            fine,
            scaled: alpha.powi(n as i32) * fine,
            rel_change,
        });
    }
    let max_scaled = entries.iter().map(|e| e.scaled).fold(0.0, f64::max);
    let stable = entries.iter().all(|e| e.rel_change < 0.05);
    Ok(IntegrabilityReport {
        entries,
        max_scaled,
        stable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMethod {
    TensorQuadrature,
    MonteCarlo,
}

/// One evaluation of the local martingale.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MartingaleEval {
    pub alpha: f64,
    pub t: f64,
    pub value: f64,
    pub error: f64,
    pub method: EvalMethod,
}

struct JNode {
    /// `log(u_i / pi_i)` per coordinate.
    log_ratio: Vec<f64>,
    /// `weight * G(u) * F(u)^{alpha-1}`.
    gfw: f64,
}

/// Precomputed quadrature table for evaluating `J_alpha` at many states
/// and times (one table per `alpha`); holds two refinement levels so
/// every evaluation carries an error estimate.
pub struct JAlphaTable {
    pub alpha: f64,
    theta: f64,
    coarse: Vec<JNode>,
    fine: Vec<JNode>,
}

impl JAlphaTable {
    pub fn build(
        s: &SpectralData,
        params: &NetworkParams,
        alpha: f64,
        cells: usize,
    ) -> Result<Self> {
        let level = |cells: usize| -> Result<Vec<JNode>> {
            let mut out = Vec::new();
            for (u, w) in simplex_nodes(s, alpha, cells)? {
                let g = g_weight(s, params, &u)?;
                let f = f_weight(s, &u)?;
                out.push(JNode {
                    log_ratio: u.iter().zip(s.pi()).map(|(x, p)| (x / p).ln()).collect(),
                    gfw: w * g * f.powf(alpha - 1.0),
                });
            }
            Ok(out)
        };
        Ok(Self {
            alpha,
            theta: s.theta(),
            coarse: level(cells)?,
            fine: level(2 * cells)?,
        })
    }

    fn sum(nodes: &[JNode], x: &State) -> f64 {
        let mut acc = 0.0;
        for node in nodes {
            let mut lg = 0.0;
            for (i, &r) in node.log_ratio.iter().enumerate() {
                lg += x.0[i] as f64 * r;
            }
            acc += node.gfw * lg.exp();
        }
        acc
    }

    pub fn eval(&self, x: &State, t: f64) -> MartingaleEval {
        let coarse = Self::sum(&self.coarse, x);
        let fine = Self::sum(&self.fine, x);
        let scale = (-self.alpha * self.theta * t).exp();
        MartingaleEval {
            alpha: self.alpha,
            t,
            value: scale * fine,
            error: scale * (fine - coarse).abs(),
            method: EvalMethod::TensorQuadrature,
        }
    }
}

/// Evaluate `J_alpha(t)` at state `x`: tensor quadrature for `n <= 3`,
/// plain Monte Carlo over the simplex beyond.
pub fn j_alpha(
    s: &SpectralData,
    params: &NetworkParams,
    x: &State,
    t: f64,
    alpha: f64,
) -> Result<MartingaleEval> {
    if alpha <= 0.0 {
        return Err(Error::InvalidParams("alpha must be positive".into()));
    }
    if s.n() <= 3 {
        let table = JAlphaTable::build(s, params, alpha, 48)?;
        return Ok(table.eval(x, t));
    }
    monte_carlo_j_alpha(s, params, x, t, alpha, 200_000)
}

fn monte_carlo_j_alpha(
    s: &SpectralData,
    params: &NetworkParams,
    x: &State,
    t: f64,
    alpha: f64,
    samples: usize,
) -> Result<MartingaleEval> {
    let n = s.n();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x6a1f);
    let volume = 1.0 / (1..n).map(|k| k as f64).product::<f64>();
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        // uniform point of the open simplex via normalized exponentials
        let mut u: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().ln()).collect();
        let total: f64 = u.iter().sum();
        u.iter_mut().for_each(|c| *c /= total);
        let g = g_weight(s, params, &u)?;
        let f = f_weight(s, &u)?;
        let mut lg = 0.0;
        for i in 0..n {
            lg += x.0[i] as f64 * (u[i] / s.pi()[i]).ln();
        }
        values.push(lg.exp() * g * f.powf(alpha - 1.0));
    }
    let (mean, se) = mean_stderr(&values);
    let scale = (-alpha * s.theta() * t).exp() * volume;
    Ok(MartingaleEval {
        alpha,
        t,
        value: scale * mean,
        error: scale * se,
        method: EvalMethod::MonteCarlo,
    })
}

/// The harmonic integral over the chart domain (two-node networks):
/// `g(t, x) = int_{C(t)} h_{u_hat}(t, x) psi(u_hat)^{alpha-1} du`.
pub fn harmonic_g(
    s: &SpectralData,
    params: &NetworkParams,
    t: f64,
    x: &State,
    alpha: f64,
    cells: usize,
) -> Result<f64> {
    if s.n() != 2 {
        return Err(Error::InvalidParams(
            "the chart integral is implemented for two nodes".into(),
        ));
    }
    let ch = SimplexChart::new(s);
    let dir = ch.complete_hyperplane(&[1.0]);
    let z = flow(s, &dir, t)?;
    // C(t) is the interval where 1 + u z_i > 0 for both i
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for &zi in &z {
        if zi > 0.0 {
            lo = lo.max(-1.0 / zi);
        } else if zi < 0.0 {
            hi = hi.min(-1.0 / zi);
        }
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::DomainViolation);
    }
    let psi_dir = psi(s, &dir); // psi is homogeneous: psi(u dir) = |u| psi(dir)
    let margin = 1e-9 * (hi - lo);
    let mut fault: Option<Error> = None;
    let mut integrand = |u: f64| -> f64 {
        if fault.is_some() {
            return 0.0;
        }
        let v: Vec<f64> = dir.iter().map(|&d| u * d).collect();
        match harmonic_h(s, params, &v, t, x) {
            Ok(h) => h * (u.abs() * psi_dir).powf(alpha - 1.0),
            Err(e) => {
                fault = Some(e);
                0.0
            }
        }
    };
    let grading = (1.0 / alpha).max(1.0);
    let core = core_width(0.0, hi - lo, alpha, grading, cells);
    let sing = [
        Singularity {
            point: 0.0,
            grading,
            core,
        },
        Singularity {
            point: lo + margin,
            grading: 2.0,
            core: 0.0,
        },
        Singularity {
            point: hi - margin,
            grading: 2.0,
            core: 0.0,
        },
    ];
    let mut value = integrate_graded(&mut integrand, lo + margin, hi - margin, &sing, cells);
    // restore the excluded core around u = 0, where the psi factor is
    // exactly linear, through its two analytically weighted midpoints
    let wv = core_virtual_weight(alpha, core);
    value += wv * (integrand(-0.5 * core) + integrand(0.5 * core));
    match fault {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// One `(alpha, ell)` cell of the exit-time deviation check.
#[derive(Debug, Clone, Serialize)]
pub struct DeviationEntry {
    pub alpha: f64,
    pub ell: u64,
    /// Monte Carlo estimate with censored paths counted as zero.
    pub lhs_mean: f64,
    /// Upper confidence bound including the censoring allowance.
    pub lhs_upper: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationBoundReport {
    pub sup_g: f64,
    pub sup_f: f64,
    pub inf_phi: f64,
    pub c3: f64,
    pub b_delta: f64,
    pub c_delta: f64,
    pub censored_paths: usize,
    pub total_paths: usize,
    pub entries: Vec<DeviationEntry>,
}

impl DeviationBoundReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

/// Parameters of the deviation-bound verification.
#[derive(Debug, Clone)]
pub struct DeviationCheckConfig {
    /// Entropy exit threshold.
    pub eps: f64,
    /// Slack parameter, strictly below `eps`.
    pub delta: f64,
    pub alphas: Vec<f64>,
    pub ells: Vec<u64>,
    pub paths: usize,
    pub horizon: f64,
    /// Simplex grid step for the sup/inf constants.
    pub grid_step: f64,
    /// Quadrature cells for the integrability factor.
    pub cells: usize,
}

/// Verify the exit-time deviation bound: the expectation of
/// `e^{-alpha theta T} 1{L(T) >= ell}` at the first entropy exceedance
/// `T` is at most `C_delta alpha^{-n} e^{|x| H(x/|x|, pi) - (eps -
/// delta) ell}`, with the constant assembled from grid-certified
/// ingredients and the left side estimated by simulation.
pub fn deviation_bound_check(
    s: &SpectralData,
    params: &NetworkParams,
    q: &RateMatrix,
    x0: &State,
    cfg: &DeviationCheckConfig,
    stream: &RngStream,
) -> Result<DeviationBoundReport> {
    let n = s.n();
    let pi = SimplexPoint::new(s.pi().to_vec())
        .map_err(|_| Error::DegenerateReference)?;
    let (_, eps0_entropy) = crate::state::epsilon_zero(&pi);
    if !(0.0 < cfg.delta && cfg.delta < cfg.eps && cfg.eps < eps0_entropy) {
        return Err(Error::PreconditionViolated(format!(
            "need 0 < delta < eps < {eps0_entropy} (entropy smallness threshold)"
        )));
    }

    // grid over the closed simplex with the configured step
    let grid = simplex_grid(n, cfg.grid_step);
    let mut sup_g: f64 = 0.0;
    let mut sup_f: f64 = 0.0;
    let mut g_cache = Vec::with_capacity(grid.len());
    let closed = params.lambda_total() + params.mu_total() == 0.0;
    for u in &grid {
        let f = f_weight(s, u)?;
        sup_f = sup_f.max(f);
        let g = if closed || u.iter().any(|&c| c <= 0.0) {
            // boundary points only matter through sup F; G is extended by
            // its interior values (bounded), skip them in the cache
            if closed {
                1.0
            } else {
                f64::NAN
            }
        } else {
            g_weight(s, params, u)?
        };
        if g.is_finite() {
            sup_g = sup_g.max(g);
        }
        g_cache.push(g);
    }
    sup_g *= 1.1;
    sup_f *= 1.1;

    // inf over v of the G-mass of the entropy ball {u : H(v, u) <= delta}
    let mut inf_phi = if n == 2 {
        // for reference points near a vertex the ball is an interval of
        // length about delta, far below the reference grid step; scan a
        // delta-resolving interior grid instead (the lower Riemann sum
        // under-counts, which is the safe direction for an infimum)
        let step = cfg.grid_step.min(cfg.delta / 40.0);
        let m = (1.0 / step).ceil() as usize;
        let mut fine_g = Vec::with_capacity(m - 1);
        for k in 1..m {
            let x = k as f64 / m as f64;
            let u = vec![x, 1.0 - x];
            fine_g.push(if closed { 1.0 } else { g_weight(s, params, &u)? });
        }
        let mut inf = f64::INFINITY;
        for v in &grid {
            let mut mass = 0.0;
            for (k, g) in fine_g.iter().enumerate() {
                let x = (k + 1) as f64 / m as f64;
                if entropy_unchecked(v, &[x, 1.0 - x]) <= cfg.delta {
                    mass += g / m as f64;
                }
            }
            inf = inf.min(mass);
        }
        inf
    } else {
        let cell = cfg.grid_step.powi(n as i32 - 1);
        let mut inf = f64::INFINITY;
        for v in &grid {
            let mut mass = 0.0;
            for (u, g) in grid.iter().zip(&g_cache) {
                if !g.is_finite() || u.iter().any(|&c| c <= 0.0) {
                    continue;
                }
                if entropy_unchecked(v, u) <= cfg.delta {
                    mass += g * cell;
                }
            }
            inf = inf.min(mass);
        }
        inf
    };
    inf_phi *= 0.9;
    if !(inf_phi > 0.0) {
        return Err(Error::CertificationFailed(
            "entropy-ball mass vanished on the grid".into(),
        ));
    }

    let alpha_grid: Vec<f64> = {
        let mut g = cfg.alphas.clone();
        g.push(1.0);
        g
    };
    let integ = integrability_bound(s, &alpha_grid, cfg.cells)?;
    let c3 = sup_g * integ.max_scaled * 1.1;
    let beta = (1.0 / sup_f).min(1.0);
    let b_delta = beta * inf_phi;
    let c_delta = c3 / b_delta;

    // Monte Carlo of the stopped functional: detect the first entropy
    // exceedance along each path
    let theta = s.theta();
    let c2 = n as f64 / pi.min_coordinate();
    let norm_gate = (cfg.eps / c2).sqrt();
    let opts = SimOptions::default();
    let mut hits: Vec<Option<(f64, u64)>> = Vec::with_capacity(cfg.paths);
    for p in 0..cfg.paths {
        let sub = stream.substream(p as u64);
        let mut hit = None;
        let exceeds = |st: &State| -> bool {
            let c = chi(st);
            let d = crate::state::sup_dist(c.as_slice(), pi.as_slice());
            d > norm_gate && entropy_unchecked(c.as_slice(), pi.as_slice()) > cfg.eps
        };
        if exceeds(x0) {
            hit = Some((0.0, x0.total()));
        } else {
            simulate_with(params, q, x0, cfg.horizon, &opts, &sub, |t, _, st| {
                if exceeds(st) {
                    hit = Some((t, st.total()));
                    false
                } else {
                    true
                }
            })?;
        }
        hits.push(hit);
    }
    let censored = hits.iter().filter(|h| h.is_none()).count();

    let x0_entropy = x0.total() as f64 * entropy_unchecked(chi(x0).as_slice(), pi.as_slice());
    let mut entries = Vec::new();
    for &alpha in &cfg.alphas {
        let censor_value = (-alpha * theta * cfg.horizon).exp();
        for &ell in &cfg.ells {
            let mut lower_samples = Vec::with_capacity(cfg.paths);
            let mut upper_samples = Vec::with_capacity(cfg.paths);
            for h in &hits {
                match h {
                    Some((t, l)) => {
                        let v = if *l >= ell {
                            (-alpha * theta * t).exp()
                        } else {
                            0.0
                        };
                        lower_samples.push(v);
                        upper_samples.push(v);
                    }
                    None => {
                        lower_samples.push(0.0);
                        upper_samples.push(censor_value);
                    }
                }
            }
            let (mean_low, _) = mean_stderr(&lower_samples);
            let (mean_up, se_up) = mean_stderr(&upper_samples);
            let lhs_upper = mean_up + 1.96 * se_up;
            let rhs = c_delta
                * alpha.powi(-(n as i32))
                * (x0_entropy - (cfg.eps - cfg.delta) * ell as f64).exp();
            entries.push(DeviationEntry {
                alpha,
                ell,
                lhs_mean: mean_low,
                lhs_upper,
                rhs,
                pass: lhs_upper <= rhs,
            });
        }
    }
    Ok(DeviationBoundReport {
        sup_g,
        sup_f,
        inf_phi,
        c3,
        b_delta,
        c_delta,
        censored_paths: censored,
        total_paths: cfg.paths,
        entries,
    })
}

/// All points of the closed simplex with coordinates on a grid of the
/// given step.
pub fn simplex_grid(n: usize, step: f64) -> Vec<Vec<f64>> {
    let m = (1.0 / step).round() as u32;
    let mut out = Vec::new();
    let mut counts = vec![0u32; n];
    fn rec(remaining: u32, idx: usize, m: u32, counts: &mut Vec<u32>, out: &mut Vec<Vec<f64>>) {
        let n = counts.len();
        if idx == n - 1 {
            counts[idx] = remaining;
            out.push(counts.iter().map(|&k| k as f64 / m as f64).collect());
            return;
        }
        for k in 0..=remaining {
            counts[idx] = k;
            rec(remaining - k, idx + 1, m, counts, out);
        }
    }
    rec(m, 0, m, &mut counts, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sym2() -> (SpectralData, RateMatrix) {
        let q = RateMatrix::new(array![[-1.0, 1.0], [1.0, -1.0]]).unwrap();
        (SpectralData::validate(&q).unwrap(), q)
    }

    fn asym2() -> SpectralData {
        let q = RateMatrix::new(array![[-2.0, 2.0], [1.0, -1.0]]).unwrap();
        SpectralData::validate(&q).unwrap()
    }

    fn asym3() -> SpectralData {
        let q = RateMatrix::new(array![
            [-2.0, 1.5, 0.5],
            [1.0, -1.5, 0.5],
            [0.5, 0.5, -1.0]
        ])
        .unwrap();
        SpectralData::validate(&q).unwrap()
    }

    fn hyper(s: &SpectralData, u: &[f64]) -> Vec<f64> {
        SimplexChart::new(s).complete_hyperplane(u)
    }

    #[test]
    fn flow_identity_eigenvector_composition() {
        let s = asym2();
        let v = hyper(&s, &[0.4]);
        let w = flow(&s, &v, 0.0).unwrap();
        for (a, b) in v.iter().zip(&w) {
            assert!((a - b).abs() < 1e-13);
        }
        // eigenvector scaling for the real non-stationary eigenpair
        let th = s.eigenvalues()[0];
        assert!(th.im.abs() < 1e-12);
        let omega: Vec<f64> = (0..2).map(|i| s.eigenvectors()[[i, 0]].re).collect();
        let fl = flow(&s, &omega, 0.7).unwrap();
        for i in 0..2 {
            assert!((fl[i] - (-th.re * 0.7).exp() * omega[i]).abs() < 1e-10);
        }
        // group property
        let a = flow(&s, &flow(&s, &v, 0.4).unwrap(), 0.9).unwrap();
        let b = flow(&s, &v, 1.3).unwrap();
        for i in 0..2 {
            assert!((a[i] - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn domain_membership_and_nesting() {
        let s = asym2();
        for t in [-1.0, 0.0, 2.0, 5.0] {
            assert!(in_domain(&s, &[0.0, 0.0], t).unwrap());
        }
        // some coordinate at or below -1 excludes the point at t = 0
        let v = hyper(&s, &[-1.1]);
        assert!(!in_domain(&s, &v, 0.0).unwrap());
        // nesting: membership at t implies membership at any s < t
        for k in 0..20 {
            let u = -0.9 + 0.13 * k as f64;
            let v = hyper(&s, &[u]);
            for t in [0.3, 1.0, 2.5] {
                if in_domain(&s, &v, t).unwrap() {
                    for ds in [0.1, 0.7, t + 1.0] {
                        assert!(in_domain(&s, &v, t - ds).unwrap());
                    }
                }
            }
        }
        assert!(matches!(
            in_domain(&s, &[0.5, 0.5], 0.0),
            Err(Error::NotInHyperplane(_))
        ));
    }

    #[test]
    fn potential_trivial_cases() {
        let (s, _) = sym2();
        let p = NetworkParams::new(vec![1.0, 0.5], vec![2.0, 1.0]).unwrap();
        assert_eq!(potential0(&s, &p, &[0.0, 0.0]).unwrap(), 0.0);
        let closed = NetworkParams::closed(2);
        let v = hyper(&s, &[0.3]);
        assert_eq!(potential0(&s, &closed, &v).unwrap(), 0.0);
    }

    #[test]
    fn potential_group_shift_matches_direct_quadrature() {
        let s = asym2();
        let p = NetworkParams::new(vec![0.7, 0.3], vec![1.2, 0.8]).unwrap();
        for (u0, t) in [(0.3, 0.5), (-0.4, 1.1), (0.1, 2.0)] {
            let v = hyper(&s, &[u0]);
            if !in_domain(&s, &v, t).unwrap() {
                continue;
            }
            let shifted = potential(&s, &p, &v, t).unwrap();
            // direct quadrature of the defining integral up to time t
            let coords = s.eigen_coords(&v);
            let mut direct = |q: f64| -> f64 {
                let w = s.from_eigen_coords_at(&coords, -q).unwrap();
                (0..2)
                    .map(|i| p.mu[i] * w[i] / (1.0 + w[i]) - p.lambda[i] * w[i])
                    .sum()
            };
            let (val, _) = adaptive(&mut direct, -40.0, t, 1e-12, 48);
            assert!((shifted - val).abs() < 1e-6, "{shifted} vs {val}");
        }
    }

    #[test]
    fn harmonic_h_reduces_to_single_queue_form() {
        // v = (u-1) 1 collapses the network to the total-population
        // birth-death martingale
        let (s, _) = sym2();
        let p = NetworkParams::new(vec![0.5, 0.5], vec![1.0, 1.0]).unwrap();
        let (lt, mt) = (p.lambda_total(), p.mu_total());
        let mut rng_state = 88172645463325252u64;
        let mut unif = || {
            // xorshift is plenty for test point placement
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let u = 0.1 + 1.8 * unif();
            let t = 2.0 * unif();
            let v = vec![u - 1.0, u - 1.0];
            let x = State(vec![3, 4]);
            let h = harmonic_h(&s, &p, &v, t, &x).unwrap();
            let expected =
                u.powi(7) * ((lt * (1.0 - u) + mt * (1.0 - 1.0 / u)) * t).exp();
            assert!(
                (h - expected).abs() <= 1e-8 * expected.abs(),
                "u = {u}, t = {t}: {h} vs {expected}"
            );
        }
        // empty state: h is the exponential factor alone
        let v = hyper(&s, &[0.2]);
        let h0 = harmonic_h(&s, &p, &v, 0.3, &State(vec![0, 0])).unwrap();
        let ph = potential(&s, &p, &v, 0.3).unwrap();
        assert!((h0 - ph.exp()).abs() < 1e-10);
    }

    #[test]
    fn harmonicity_residual_is_small() {
        let s = asym2();
        let p = NetworkParams::new(vec![1.0, 0.5], vec![2.0, 1.5]).unwrap();
        // the backward flow amplifies the decaying mode, so the test
        // points are chosen (and checked) to stay in D(t + dt)
        for (u0, t, x) in [
            (0.3, 0.2, State(vec![2, 3])),
            (-0.1, 0.4, State(vec![1, 1])),
            (0.2, 0.35, State(vec![4, 2])),
        ] {
            let v = hyper(&s, &[u0]);
            assert!(in_domain(&s, &v, t + 1e-4).unwrap());
            let r = harmonicity_residual(&s, &p, &v, t, &x, 1e-5).unwrap();
            assert!(r < 1e-6, "residual {r}");
        }
    }

    #[test]
    fn psi_examples() {
        let s = asym3();
        assert!(psi(&s, &[1.0, 1.0, 1.0]) < 1e-12);
        let v = [0.5, -0.3, 0.2];
        let base = psi(&s, &v);
        let scaled = psi(&s, &[-1.5, 0.9, -0.6]);
        assert!((scaled - 3.0f64.powi(2) * base).abs() < 1e-10 * scaled.max(1.0));
        // semigroup scaling by the negative trace
        for t in [-2.0, -0.5, 0.8, 3.0] {
            let w = s.propagate(&v, t).unwrap();
            let expect = (-s.theta() * t).exp() * base;
            assert!(
                (psi(&s, &w) - expect).abs() <= 1e-10 * expect.abs().max(1e-12),
                "t = {t}"
            );
        }
    }

    #[test]
    fn weight_functions_at_reference_points() {
        let s = asym2();
        let pi = s.pi().to_vec();
        assert!(f_weight(&s, &pi).unwrap() < 1e-12);
        let p = NetworkParams::new(vec![0.4, 0.6], vec![1.0, 1.0]).unwrap();
        assert!((g_weight(&s, &p, &pi).unwrap() - 1.0).abs() < 1e-9);
        let closed = NetworkParams::closed(2);
        assert_eq!(g_weight(&s, &closed, &[0.3, 0.7]).unwrap(), 1.0);
        assert!(matches!(
            g_weight(&s, &p, &[1.0, 0.0]),
            Err(Error::BoundaryPoint)
        ));
    }

    #[test]
    fn integrability_matches_closed_form_two_nodes() {
        // symmetric two-node case: F = k |2u - 1| for a normalization
        // constant k fixed by the eigenbasis, so int F^{alpha-1} =
        // k^{alpha-1} / alpha
        let (s, _) = sym2();
        let k = f_weight(&s, &[1.0, 0.0]).unwrap();
        let report = integrability_bound(&s, &[0.1, 0.3, 0.5, 1.0], 64).unwrap();
        assert!(report.stable);
        for e in &report.entries {
            let exact = k.powf(e.alpha - 1.0) / e.alpha;
            assert!(
                (e.fine - exact).abs() < 1e-5 * exact,
                "alpha = {}: {} vs {exact}",
                e.alpha,
                e.fine
            );
        }
        // alpha = 1 integrates the unit volume
        let last = report.entries.iter().find(|e| e.alpha == 1.0).unwrap();
        assert!((last.fine - 1.0).abs() < 1e-9);
    }

    #[test]
    fn integrability_three_nodes_stable() {
        let s = asym3();
        let report = integrability_bound(&s, &[0.3, 0.5, 1.0], 24).unwrap();
        assert!(report.stable, "{report:?}");
        let vol = report.entries.iter().find(|e| e.alpha == 1.0).unwrap();
        assert!((vol.fine - 0.5).abs() < 1e-6, "volume {}", vol.fine);
    }

    #[test]
    fn j_alpha_two_displayed_forms_agree() {
        let s = asym2();
        let p = NetworkParams::new(vec![0.5, 0.5], vec![1.0, 1.0]).unwrap();
        let alpha = 0.6;
        let x = State(vec![3, 5]);
        let table = JAlphaTable::build(&s, &p, alpha, 48).unwrap();
        let direct = table.eval(&x, 0.0);
        // entropy form of the same integral
        let c = chi(&x);
        let l = x.total() as f64;
        let h_pi = entropy_unchecked(c.as_slice(), s.pi());
        let mut acc = 0.0;
        for (u, w) in simplex_nodes(&s, alpha, 96).unwrap() {
            let h_u = entropy_unchecked(c.as_slice(), &u);
            let g = g_weight(&s, &p, &u).unwrap();
            let f = f_weight(&s, &u).unwrap();
            acc += w * (l * (h_pi - h_u)).exp() * g * f.powf(alpha - 1.0);
        }
        assert!(
            (direct.value - acc).abs() <= 1e-6 * acc.abs().max(1e-12),
            "{} vs {acc}",
            direct.value
        );
    }

    #[test]
    fn j_alpha_closed_two_node_reference() {
        let s = asym2();
        let closed = NetworkParams::closed(2);
        let alpha = 0.4;
        let x = State(vec![1, 1]);
        let eval = j_alpha(&s, &closed, &x, 0.0, alpha).unwrap();
        assert_eq!(eval.method, EvalMethod::TensorQuadrature);
        // exact reference: the integrand is a quadratic polynomial
        // p(u) = u (1 - u) / (pi_1 pi_2) times |a|^{alpha-1}
        // |u - r|^{alpha-1}, integrable side by side in closed form
        let pi = s.pi().to_vec();
        let fac = affine_factors(&s);
        let root = (-fac.b[0] / fac.a[0][0]).re;
        let amod = fac.a[0][0].norm();
        let c0 = root * (1.0 - root) / (pi[0] * pi[1]);
        let c1 = (1.0 - 2.0 * root) / (pi[0] * pi[1]);
        let c2 = -1.0 / (pi[0] * pi[1]);
        let side = |len: f64, sign: f64| {
            c0 * len.powf(alpha) / alpha
                + sign * c1 * len.powf(alpha + 1.0) / (alpha + 1.0)
                + c2 * len.powf(alpha + 2.0) / (alpha + 2.0)
        };
        let reference = amod.powf(alpha - 1.0) * (side(root, -1.0) + side(1.0 - root, 1.0));
        assert!(
            (eval.value - reference).abs() <= 1e-6 * reference.abs(),
            "{} vs {reference}",
            eval.value
        );
        assert!(eval.error <= 1e-5 * reference.abs());
        // the time dependence is the explicit exponential factor
        let later = j_alpha(&s, &closed, &x, 1.0, alpha).unwrap();
        let expect = eval.value * (-alpha * s.theta()).exp();
        assert!((later.value - expect).abs() < 1e-12 * expect.abs());
        assert!(later.value >= 0.0 && later.value < eval.value);
    }

    #[test]
    fn simplex_grid_counts() {
        assert_eq!(simplex_grid(2, 0.01).len(), 101);
        assert_eq!(simplex_grid(3, 0.1).len(), 66);
    }

    #[test]
    fn deviation_bound_smoke() {
        let (s, q) = sym2();
        let closed = NetworkParams::closed(2);
        let cfg = DeviationCheckConfig {
            eps: 0.02,
            delta: 0.008,
            alphas: vec![0.5],
            ells: vec![10],
            paths: 100,
            horizon: 20.0,
            grid_step: 0.01,
            cells: 48,
        };
        let report = deviation_bound_check(
            &s,
            &closed,
            &q,
            &State(vec![10, 10]),
            &cfg,
            &RngStream::new(5, 0),
        )
        .unwrap();
        assert!(report.c_delta.is_finite() && report.c_delta > 0.0);
        assert!(report.pass(), "{report:?}");
        // rejects thresholds beyond the entropy smallness window
        let bad = DeviationCheckConfig {
            eps: 0.2,
            ..cfg
        };
        assert!(matches!(
            deviation_bound_check(&s, &closed, &q, &State(vec![10, 10]), &bad, &RngStream::new(5, 0)),
            Err(Error::PreconditionViolated(_))
        ));
    }
}
