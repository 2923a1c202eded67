//! The change of variables between the hyperplane
//! `H = {v : sum_i pi_i v_i = 0}`, the open unit simplex in `R^{n-1}`,
//! and the time-indexed domains on which the harmonic integrand lives.

use ndarray::Array2;

use crate::error::Result;
use crate::spectral::SpectralData;

use super::{flow, in_domain};

/// Coordinate maps around the `(n-1)`-dimensional chart: hyperplane
/// completion, simplex completion, projection, and the affine map that
/// carries the flow domain onto the open simplex.
pub struct SimplexChart<'a> {
    s: &'a SpectralData,
}

impl<'a> SimplexChart<'a> {
    pub fn new(s: &'a SpectralData) -> Self {
        Self { s }
    }

    pub fn n(&self) -> usize {
        self.s.n()
    }

    /// Hyperplane completion `u -> u_hat`: append the coordinate that
    /// makes the result pi-orthogonal.
    pub fn complete_hyperplane(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(u.len(), n - 1);
        let pi = self.s.pi();
        let mut v = u.to_vec();
        let dot: f64 = u.iter().zip(pi).map(|(x, p)| x * p).sum();
        v.push(-dot / pi[n - 1]);
        v
    }

    /// Simplex completion `u -> u_tilde`: append `1 - sum u_i`.
    pub fn complete_simplex(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(u.len(), n - 1);
        let mut v = u.to_vec();
        v.push(1.0 - u.iter().sum::<f64>());
        v
    }

    /// Drop the last coordinate.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        v[..v.len() - 1].to_vec()
    }

    /// Membership in the open unit simplex of `R^{n-1}`.
    pub fn in_simplex(&self, u: &[f64]) -> bool {
        u.iter().all(|&x| x > 0.0) && u.iter().sum::<f64>() < 1.0
    }

    /// Membership in the chart image `C(t)` of the flow domain `D(t)`.
    pub fn in_c(&self, u: &[f64], t: f64) -> Result<bool> {
        in_domain(self.s, &self.complete_hyperplane(u), t)
    }

    /// The forward chart map: project, rescale by `pi` and shift the
    /// flowed hyperplane point into the simplex.
    pub fn forward(&self, u: &[f64], t: f64) -> Result<Vec<f64>> {
        let w = flow(self.s, &self.complete_hyperplane(u), t)?;
        let pi = self.s.pi();
        Ok((0..self.n() - 1).map(|i| pi[i] * (w[i] + 1.0)).collect())
    }

    /// The inverse chart map.
    pub fn inverse(&self, u: &[f64], t: f64) -> Result<Vec<f64>> {
        let pi = self.s.pi();
        let ut = self.complete_simplex(u);
        let w: Vec<f64> = ut.iter().zip(pi).map(|(x, p)| x / p - 1.0).collect();
        let z = self.s.propagate(&w, t)?;
        Ok(self.project(&z))
    }

    /// Determinant of the linear part of the forward map:
    /// `e^{theta t} prod_{i<n} pi_i`.
    pub fn jacobian(&self, t: f64) -> f64 {
        let pi = self.s.pi();
        (self.s.theta() * t).exp() * pi[..self.n() - 1].iter().product::<f64>()
    }

    /// Numerical determinant of the linear part of `forward(., t)`,
    /// for cross-checks.
    pub fn jacobian_numeric(&self, t: f64) -> Result<f64> {
        let m = self.n() - 1;
        let base = self.forward(&vec![0.0; m], t)?;
        let mut a = Array2::zeros((m, m));
        for j in 0..m {
            let mut u = vec![0.0; m];
            u[j] = 1.0;
            let col = self.forward(&u, t)?;
            for i in 0..m {
                a[[i, j]] = col[i] - base[i];
            }
        }
        Ok(det(&mut a))
    }
}

fn det(a: &mut Array2<f64>) -> f64 {
    let m = a.nrows();
    let mut d = 1.0;
    for k in 0..m {
        let mut p = k;
        for r in k + 1..m {
            if a[[r, k]].abs() > a[[p, k]].abs() {
                p = r;
            }
        }
        if a[[p, k]] == 0.0 {
            return 0.0;
        }
        if p != k {
            for c in 0..m {
                a.swap([k, c], [p, c]);
            }
            d = -d;
        }
        d *= a[[k, k]];
        for r in k + 1..m {
            let factor = a[[r, k]] / a[[k, k]];
            for c in k..m {
                a[[r, c]] -= factor * a[[k, c]];
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::RateMatrix;
    use ndarray::array;

    fn asym3() -> SpectralData {
        let q = RateMatrix::new(array![
            [-2.0, 1.5, 0.5],
            [1.0, -1.5, 0.5],
            [0.5, 0.5, -1.0]
        ])
        .unwrap();
        SpectralData::validate(&q).unwrap()
    }

    #[test]
    fn completions_satisfy_their_constraints() {
        let s = asym3();
        let ch = SimplexChart::new(&s);
        let u = [0.3, -0.1];
        let hat = ch.complete_hyperplane(&u);
        let dot: f64 = hat.iter().zip(s.pi()).map(|(v, p)| v * p).sum();
        assert!(dot.abs() < 1e-14);
        let tilde = ch.complete_simplex(&[0.2, 0.3]);
        assert!((tilde.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(ch.project(&hat), vec![0.3, -0.1]);
    }

    #[test]
    fn forward_inverse_roundtrip() {
        let s = asym3();
        let ch = SimplexChart::new(&s);
        for t in [0.0, 0.4, 1.3] {
            for u in [[0.2, 0.3], [0.05, 0.6], [0.4, 0.4]] {
                // u in S; pull back through the inverse and push forward
                let v = ch.inverse(&u, t).unwrap();
                let back = ch.forward(&v, t).unwrap();
                for (a, b) in back.iter().zip(&u) {
                    assert!((a - b).abs() < 1e-10, "{back:?} vs {u:?}");
                }
            }
        }
    }

    #[test]
    fn chart_carries_domain_onto_simplex() {
        let s = asym3();
        let ch = SimplexChart::new(&s);
        // sample points of R^{n-1}; membership must agree through the map
        let mut disagreements = 0;
        for t in [0.0, 0.7] {
            for i in -8..9 {
                for j in -8..9 {
                    let u = [i as f64 * 0.35, j as f64 * 0.35];
                    let inside = ch.in_c(&u, t).unwrap();
                    let img = ch.forward(&u, t).unwrap();
                    if inside != ch.in_simplex(&img) {
                        disagreements += 1;
                    }
                }
            }
        }
        assert_eq!(disagreements, 0);
    }

    #[test]
    fn jacobian_matches_formula() {
        let s = asym3();
        let ch = SimplexChart::new(&s);
        for t in [0.0, 0.5, 1.7, 3.0] {
            let analytic = ch.jacobian(t);
            let numeric = ch.jacobian_numeric(t).unwrap();
            assert!(
                (numeric - analytic).abs() <= 1e-9 * analytic.abs().max(1.0),
                "t = {t}: {numeric} vs {analytic}"
            );
        }
    }
}
