//! Occupancy states, the empirical distribution, relative entropy, the
//! entropy/norm sandwich constants, and stopping-time detection on
//! piecewise-constant jump paths.
//!
//! Deviations from the stationary law are measured in the sup norm
//! `||x|| = max_i |x_i|` or by the relative entropy
//! `H(rho, pi) = sum_i rho_i log(rho_i / pi_i)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Occupancy vector: customers per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State(pub Vec<u32>);

impl State {
    pub fn zeros(n: usize) -> Self {
        State(vec![0; n])
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    /// Total population `|x|`.
    pub fn total(&self) -> u64 {
        self.0.iter().map(|&x| x as u64).sum()
    }

    pub fn dominates(&self, other: &State) -> bool {
        self.n() == other.n() && self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
    }
}

/// A probability vector on `{1..n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.iter().any(|&r| r < 0.0 || !r.is_finite()) {
            return Err(Error::InvalidParams(
                "simplex point with negative or nonfinite coordinate".into(),
            ));
        }
        let s: f64 = rho.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!(
                "simplex point sums to {s}, expected 1"
            )));
        }
        Ok(SimplexPoint(rho))
    }

    /// `e_i` as a distribution.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut rho = vec![0.0; n];
        rho[i] = 1.0;
        SimplexPoint(rho)
    }

    pub fn uniform(n: usize) -> Self {
        SimplexPoint(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn min_coordinate(&self) -> f64 {
        self.0.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|&r| r > 0.0)
    }
}

/// Sup-norm distance between two vectors.
pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Stability regime of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Supercritical,
    Subcritical,
    Critical,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::Supercritical => "supercritical",
            Regime::Subcritical => "subcritical",
            Regime::Critical => "critical",
        };
        f.write_str(s)
    }
}

/// Per-node arrival rates and service capacities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkParams {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

impl NetworkParams {
    pub fn new(lambda: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if lambda.len() != mu.len() || lambda.is_empty() {
            return Err(Error::InvalidParams(
                "lambda and mu must have equal, nonzero length".into(),
            ));
        }
        if lambda
            .iter()
            .chain(mu.iter())
            .any(|&r| r < 0.0 || !r.is_finite())
        {
            return Err(Error::InvalidParams(
                "rates must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { lambda, mu })
    }

    /// Closed system: no arrivals, no departures.
    pub fn closed(n: usize) -> Self {
        Self {
            lambda: vec![0.0; n],
            mu: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// Total arrival rate.
    pub fn lambda_total(&self) -> f64 {
        self.lambda.iter().sum()
    }

    /// Total service capacity.
    pub fn mu_total(&self) -> f64 {
        self.mu.iter().sum()
    }

    pub fn regime(&self) -> Regime {
        let l = self.lambda_total();
        let m = self.mu_total();
        if l > m {
            Regime::Supercritical
        } else if l < m {
            Regime::Subcritical
        } else {
            Regime::Critical
        }
    }
}

/// A single transition of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EventKind {
    Arrival { node: u8 },
    Departure { node: u8 },
    Migration { from: u8, to: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub kind: EventKind,
}

/// A time-stamped jump path. States between jumps are constant; the state
/// after each event is reconstructed by replaying the event deltas from
/// the initial state.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial: State,
    pub events: Vec<JumpEvent>,
    /// End of the observation window (events beyond it were not sampled).
    pub horizon: f64,
}

impl Trajectory {
    pub fn new(initial: State, horizon: f64) -> Self {
        Self {
            initial,
            events: Vec::new(),
            horizon,
        }
    }

    pub fn n(&self) -> usize {
        self.initial.n()
    }

    /// Iterate `(time, state)` over the path, starting with `(0, initial)`.
    pub fn replay(&self) -> Replay<'_> {
        Replay {
            traj: self,
            next: 0,
            state: self.initial.clone(),
        }
    }

    pub fn final_state(&self) -> State {
        let mut s = self.initial.clone();
        for ev in &self.events {
            apply_event(&mut s, ev.kind);
        }
        s
    }

    /// Check the structural invariants: strictly increasing times, valid
    /// deltas, departures only from occupied nodes.
    pub fn check_well_formed(&self) -> Result<()> {
        let mut t = 0.0;
        let mut s = self.initial.clone();
        for ev in &self.events {
            if ev.time <= t {
                return Err(Error::InvalidParams(format!(
                    "nonincreasing jump time {}",
                    ev.time
                )));
            }
            t = ev.time;
            match ev.kind {
                EventKind::Departure { node } if s.0[node as usize] == 0 => {
                    return Err(Error::InvalidParams(format!(
                        "departure from empty node {node}"
                    )));
                }
                EventKind::Migration { from, .. } if s.0[from as usize] == 0 => {
                    return Err(Error::InvalidParams(format!(
                        "migration from empty node {from}"
                    )));
                }
                _ => {}
            }
            apply_event(&mut s, ev.kind);
        }
        Ok(())
    }

    /// CSV serialization: `time,event_kind,from_node,to_node,x_1,...,x_n`.
    /// The first row carries the initial state with kind `init`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "time,event_kind,from_node,to_node")?;
        for i in 1..=self.n() {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        let mut row = |t: f64, kind: &str, from: &str, to: &str, s: &State| {
            let mut line = format!("{t},{kind},{from},{to}");
            for &x in &s.0 {
                line.push(',');
                line.push_str(&x.to_string());
            }
            writeln!(w, "{line}")
        };
        row(0.0, "init", "", "", &self.initial)?;
        let mut s = self.initial.clone();
        for ev in &self.events {
            apply_event(&mut s, ev.kind);
            match ev.kind {
                EventKind::Arrival { node } => {
                    row(ev.time, "arrival", "", &(node + 1).to_string(), &s)?
                }
                EventKind::Departure { node } => {
                    row(ev.time, "departure", &(node + 1).to_string(), "", &s)?
                }
                EventKind::Migration { from, to } => row(
                    ev.time,
                    "migration",
                    &(from + 1).to_string(),
                    &(to + 1).to_string(),
                    &s,
                )?,
            }
        }
        Ok(())
    }
}

pub fn apply_event(s: &mut State, kind: EventKind) {
    match kind {
        EventKind::Arrival { node } => s.0[node as usize] += 1,
        EventKind::Departure { node } => s.0[node as usize] -= 1,
        EventKind::Migration { from, to } => {
            s.0[from as usize] -= 1;
            s.0[to as usize] += 1;
        }
    }
}

pub struct Replay<'a> {
    traj: &'a Trajectory,
    next: usize,
    state: State,
}

impl<'a> Iterator for Replay<'a> {
    type Item = (f64, State);

    fn next(&mut self) -> Option<(f64, State)> {
        if self.next == 0 {
            self.next = 1;
            return Some((0.0, self.state.clone()));
        }
        let ev = self.traj.events.get(self.next - 1)?;
        self.next += 1;
        apply_event(&mut self.state, ev.kind);
        Some((ev.time, self.state.clone()))
    }
}

/// Empirical distribution of customers over nodes, with the convention
/// `chi = e_1` for the empty state.
pub fn chi(x: &State) -> SimplexPoint {
    let total = x.total();
    if total == 0 {
        return SimplexPoint::unit(x.n(), 0);
    }
    SimplexPoint(x.0.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Relative entropy `H(rho, pi)`; terms with `rho_i = 0` contribute 0.
pub fn entropy(rho: &SimplexPoint, pi: &SimplexPoint) -> Result<f64> {
    if !pi.is_interior() {
        return Err(Error::DegenerateReference);
    }
    Ok(entropy_unchecked(rho.as_slice(), pi.as_slice()))
}

pub(crate) fn entropy_unchecked(rho: &[f64], pi: &[f64]) -> f64 {
    rho.iter()
        .zip(pi)
        .filter(|(&r, _)| r > 0.0)
        .map(|(&r, &p)| r * (r / p).ln())
        .sum()
}

/// The sandwich constants of the entropy/norm equivalence:
/// `C1 ||rho - pi||^2 <= H(rho, pi) <= C2 ||rho - pi||^2` with `C1 = 1/2`
/// (Pinsker) and `C2 = n / min_i pi_i` (chi-square bound), certified over
/// a dense grid of the simplex.
pub fn entropy_norm_constants(pi: &SimplexPoint) -> Result<(f64, f64)> {
    if !pi.is_interior() {
        return Err(Error::DegenerateReference);
    }
    let n = pi.n();
    let c1 = 0.5;
    let c2 = n as f64 / pi.min_coordinate();
    let check = |rho: &[f64]| -> Result<()> {
        let d = sup_dist(rho, pi.as_slice());
        let h = entropy_unchecked(rho, pi.as_slice());
        if c1 * d * d > h + 1e-12 || h > c2 * d * d + 1e-12 {
            return Err(Error::CertificationFailed(format!(
                "rho = {rho:?}: H = {h}, ||rho-pi|| = {d}"
            )));
        }
        Ok(())
    };
    // Exhaustive grid with step 0.01 for small n, dense random sampling
    // beyond (the exhaustive grid grows combinatorially).
    const STEPS: u32 = 100;
    if n <= 5 {
        let mut counts = vec![0u32; n];
        enumerate_compositions(STEPS, n, 0, &mut counts, &mut |c: &[u32]| {
            let rho: Vec<f64> = c.iter().map(|&k| k as f64 / STEPS as f64).collect();
            check(&rho)
        })?;
    } else {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..2_000_000 {
            let mut rho: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().ln()).collect();
            let s: f64 = rho.iter().sum();
            rho.iter_mut().for_each(|r| *r /= s);
            check(&rho)?;
        }
        for i in 0..n {
            let mut rho = vec![0.0; n];
            rho[i] = 1.0;
            check(&rho)?;
        }
    }
    Ok((c1, c2))
}

fn enumerate_compositions<F: FnMut(&[u32]) -> Result<()>>(
    remaining: u32,
    n: usize,
    idx: usize,
    counts: &mut Vec<u32>,
    f: &mut F,
) -> Result<()> {
    if idx == n - 1 {
        counts[idx] = remaining;
        return f(counts);
    }
    for k in 0..=remaining {
        counts[idx] = k;
        enumerate_compositions(remaining - k, n, idx + 1, counts, f)?;
    }
    Ok(())
}

/// Deviation thresholds below which the corresponding exit time is
/// guaranteed to precede first node-emptiness: `(eps0_norm, eps0_entropy)`
/// with `eps0_norm = (min pi)/2` and `eps0_entropy = C1 eps0_norm^2`.
pub fn epsilon_zero(pi: &SimplexPoint) -> (f64, f64) {
    let e = pi.min_coordinate() / 2.0;
    (e, 0.5 * e * e)
}

/// Stopping times detected on a trajectory. `None` means the condition
/// never held within the horizon (censored).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoppingTimes {
    /// First entrance: `||chi - pi|| <= eps`.
    pub t_enter: Option<f64>,
    /// First exit: `||chi - pi|| > eps`.
    pub t_exit: Option<f64>,
    /// First entropy exceedance: `H(chi, pi) > eps`.
    pub t_entropy: Option<f64>,
    /// First node-emptiness.
    pub t_empty: Option<f64>,
    pub horizon: f64,
}

/// Scan the piecewise-constant path at jump epochs (and time 0) for the
/// four stopping conditions.
pub fn stopping_times(traj: &Trajectory, pi: &SimplexPoint, eps: f64) -> StoppingTimes {
    assert!(eps > 0.0, "threshold must be positive");
    let mut st = StoppingTimes {
        t_enter: None,
        t_exit: None,
        t_entropy: None,
        t_empty: None,
        horizon: traj.horizon,
    };
    for (t, s) in traj.replay() {
        let c = chi(&s);
        let d = sup_dist(c.as_slice(), pi.as_slice());
        if st.t_enter.is_none() && d <= eps {
            st.t_enter = Some(t);
        }
        if st.t_exit.is_none() && d > eps {
            st.t_exit = Some(t);
        }
        if st.t_entropy.is_none() && entropy_unchecked(c.as_slice(), pi.as_slice()) > eps {
            st.t_entropy = Some(t);
        }
        if st.t_empty.is_none() && s.0.iter().any(|&x| x == 0) {
            st.t_empty = Some(t);
        }
        if st.t_enter.is_some()
            && st.t_exit.is_some()
            && st.t_entropy.is_some()
            && st.t_empty.is_some()
        {
            break;
        }
    }
    st
}
