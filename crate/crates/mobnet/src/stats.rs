//! Small statistical helpers used by the verification harnesses:
//! sample moments, binomial confidence bounds, a one-sided exact test
//! for comparing two proportions, and the two-sample
//! Kolmogorov-Smirnov test.

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "need at least two samples");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Wilson score interval for a binomial proportion; returns
/// `(lower, upper)` at normal quantile `z` (e.g. 1.96 for 95%).
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    assert!(trials > 0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn ln_factorial(k: u64) -> f64 {
    // exact small table, Stirling beyond; counts here stay modest
    const TABLE_LEN: u64 = 256;
    if k < TABLE_LEN {
        (2..=k).map(|i| (i as f64).ln()).sum()
    } else {
        let x = k as f64;
        x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// One-sided Fisher exact test that group A's success probability
/// exceeds group B's. Returns the p-value of the observed table under
/// the null of equal proportions (hypergeometric tail).
pub fn fisher_exact_greater(succ_a: u64, n_a: u64, succ_b: u64, n_b: u64) -> f64 {
    assert!(succ_a <= n_a && succ_b <= n_b);
    let total_succ = succ_a + succ_b;
    let total = n_a + n_b;
    let lo = total_succ.saturating_sub(n_b);
    let hi = total_succ.min(n_a);
    let ln_denom = ln_choose(total, total_succ);
    let mut p = 0.0;
    for k in succ_a.max(lo)..=hi {
        p += (ln_choose(n_a, k) + ln_choose(n_b, total_succ - k) - ln_denom).exp();
    }
    p.min(1.0)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, ks_tail(lambda))
}

fn ks_tail(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut p = 0.0;
    let mut sign = 1.0;
    for k in 1..101 {
        let term = sign * (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        p += term;
        sign = -sign;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (2.0 * p).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        // sample sd = sqrt(5/3), se = sd/2
        assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn wilson_brackets_proportion() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(lo < 0.5 && 0.5 < hi);
        assert!(hi - lo < 0.25);
        let (lo, _) = wilson_interval(0, 10, 1.96);
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn fisher_matches_hand_table() {
        // table [[3,1],[1,3]]: one-sided p = P(K >= 3), K hypergeometric
        // with N=8, K_total=4, n_A=4: p = (16 + 1)/70
        let p = fisher_exact_greater(3, 4, 1, 4);
        assert!((p - 17.0 / 70.0).abs() < 1e-12);
        // extreme table is the smallest tail
        let p = fisher_exact_greater(4, 4, 0, 4);
        assert!((p - 1.0 / 70.0).abs() < 1e-12);
        // no effect: p close to 1
        assert!(fisher_exact_greater(0, 4, 4, 4) > 0.99);
    }

    #[test]
    fn ks_same_sample_accepts() {
        let a: Vec<f64> = (0..500).map(|i| (i as f64 * 0.618).sin()).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
    }

    #[test]
    fn ks_shifted_sample_rejects() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let b: Vec<f64> = (0..500).map(|i| i as f64 / 500.0 + 0.3).collect();
        let (d, p) = ks_two_sample(&a, &b);
        assert!(d > 0.25);
        assert!(p < 1e-6);
    }
}
