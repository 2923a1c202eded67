//! Cross-checks between independent constructions: the entropy/norm
//! stopping-time chain, a closed-form mean, and the law agreement
//! between the plain sampler and the enlarged process's marginal.

use mobnet::simulator::{simulate, simulate_triple, RngStream, SimOptions};
use mobnet::spectral::{RateMatrix, SpectralData};
use mobnet::state::{entropy_norm_constants, stopping_times, NetworkParams, SimplexPoint, State};
use mobnet::stats::{ks_two_sample, mean_stderr};

fn sym2() -> RateMatrix {
    RateMatrix::new(ndarray::array![[-1.0, 1.0], [1.0, -1.0]]).unwrap()
}

/// The sandwich constants order the exit times pathwise: entropy above
/// `C1 eps^2` precedes a norm deviation above `eps`, which precedes
/// entropy above `C2 eps^2`.
#[test]
fn stopping_time_chain_holds_pathwise() {
    let q = sym2();
    let s = SpectralData::validate(&q).unwrap();
    let pi = SimplexPoint::new(s.pi().to_vec()).unwrap();
    let (c1, c2) = entropy_norm_constants(&pi).unwrap();
    let params = NetworkParams::new(vec![1.0, 1.0], vec![0.5, 0.5]).unwrap();
    let x0 = State(vec![30, 30]);
    let eps = 0.2;
    let opts = SimOptions::default();
    for p in 0..200 {
        let traj = simulate(&params, &q, &x0, 5.0, &opts, &RngStream::new(0x57a9, p)).unwrap();
        let t_lo = stopping_times_entropy(&traj, &pi, c1 * eps * eps);
        let t_mid = stopping_times(&traj, &pi, eps).t_exit;
        let t_hi = stopping_times_entropy(&traj, &pi, c2 * eps * eps);
        if let Some(m) = t_mid {
            let lo = t_lo.expect("norm exit implies the low entropy exit");
            assert!(lo <= m, "path {p}: {lo} > {m}");
        }
        if let Some(h) = t_hi {
            let m = t_mid.expect("high entropy exit implies the norm exit");
            assert!(m <= h, "path {p}: {m} > {h}");
        }
    }
}

fn stopping_times_entropy(
    traj: &mobnet::state::Trajectory,
    pi: &SimplexPoint,
    eps: f64,
) -> Option<f64> {
    stopping_times(traj, pi, eps).t_entropy
}

/// Without service the population is initial plus a Poisson stream.
#[test]
fn pure_arrival_mean_matches_poisson() {
    let q = sym2();
    let params = NetworkParams::new(vec![0.8, 0.7], vec![0.0, 0.0]).unwrap();
    let x0 = State(vec![4, 1]);
    let opts = SimOptions::default();
    let finals: Vec<f64> = (0..400)
        .map(|p| {
            simulate(&params, &q, &x0, 1.0, &opts, &RngStream::new(0x90a7, p))
                .unwrap()
                .final_state()
                .total() as f64
        })
        .collect();
    let (mean, se) = mean_stderr(&finals);
    let expect = 5.0 + 1.5; // |x0| + lambda t
    assert!(
        (mean - expect).abs() <= 3.0 * se + 1e-12,
        "mean {mean} vs {expect} (se {se})"
    );
}

/// The network marginal of the enlarged process has the same law as the
/// direct sampler; compare the population at a fixed time across
/// independent ensembles.
#[test]
fn enlarged_marginal_agrees_in_law() {
    let q = sym2();
    let params = NetworkParams::new(vec![0.6, 0.4], vec![0.5, 0.7]).unwrap();
    let x0 = State(vec![3, 2]);
    let opts = SimOptions::default();
    let direct: Vec<f64> = (0..300)
        .map(|p| {
            simulate(&params, &q, &x0, 2.0, &opts, &RngStream::new(0xd1ec7, p))
                .unwrap()
                .final_state()
                .total() as f64
        })
        .collect();
    let marginal: Vec<f64> = (0..300)
        .map(|p| {
            simulate_triple(&params, &q, &x0, 2.0, &opts, &RngStream::new(0x731b1e, p))
                .unwrap()
                .x_trajectory()
                .final_state()
                .total() as f64
        })
        .collect();
    let (d, p_value) = ks_two_sample(&direct, &marginal);
    assert!(p_value > 0.001, "KS d = {d}, p = {p_value}");
}
