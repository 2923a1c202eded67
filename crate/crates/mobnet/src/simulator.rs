//! Exact jump-chain simulation of the network, the enlarged triple
//! process, the labelled-particle representation, and the pathwise
//! coupling constructions.
//!
//! All samplers use the direct method: at state `x` the total rate is
//! `R(x) = sum_i lambda_i + sum_i mu_i 1{x_i > 0} + sum_{i != j} q_ij x_i`,
//! the holding time is Exponential(R(x)) and the event is chosen with
//! probability proportional to its rate. No time discretization anywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::spectral::RateMatrix;
use crate::state::{apply_event, EventKind, JumpEvent, NetworkParams, State, Trajectory};

/// A reproducible, splittable source of randomness. Identical
/// `(seed, stream)` pairs yield identical draws; distinct streams are
/// independent ChaCha key schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Derive an independent child stream.
    pub fn substream(&self, k: u64) -> Self {
        // splitmix64 step keeps children well separated
        let mut z = self.stream ^ k.wrapping_mul(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        Self {
            seed: self.seed,
            stream: z ^ (z >> 31),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.stream.to_le_bytes());
        key[16..24].copy_from_slice(b"mobnet\0\0");
        ChaCha8Rng::from_seed(key)
    }
}

/// Runaway-run guards shared by all samplers.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Abort if the total event rate exceeds this.
    pub rate_guard: f64,
    /// Abort if a single path exceeds this many events.
    pub event_guard: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            rate_guard: 1e12,
            event_guard: 100_000_000,
        }
    }
}

fn check_dims(params: &NetworkParams, q: &RateMatrix, x0: &State) -> Result<()> {
    if params.n() != q.n() || x0.n() != q.n() {
        return Err(Error::InvalidParams(format!(
            "dimension mismatch: params n = {}, Q n = {}, state n = {}",
            params.n(),
            q.n(),
            x0.n()
        )));
    }
    Ok(())
}

/// Core sampler with a streaming observer. The observer sees each event
/// (time, kind, state after the jump) and may return `false` to stop the
/// run early. Returns the state at termination.
pub fn simulate_with<F>(
    params: &NetworkParams,
    q: &RateMatrix,
    x0: &State,
    horizon: f64,
    opts: &SimOptions,
    stream: &RngStream,
    mut observe: F,
) -> Result<State>
where
    F: FnMut(f64, EventKind, &State) -> bool,
{
    check_dims(params, q, x0)?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams("horizon must be positive".into()));
    }
    let n = q.n();
    let qm = q.entries();
    let qout: Vec<f64> = (0..n).map(|i| -qm[[i, i]]).collect();
    let lambda_total = params.lambda_total();

    let mut rng = stream.rng();
    let mut x = x0.clone();
    let mut dep_rate: f64 = (0..n)
        .filter(|&i| x.0[i] > 0)
        .map(|i| params.mu[i])
        .sum();
    let mut mig_rate: f64 = (0..n).map(|i| qout[i] * x.0[i] as f64).sum();

    let mut t = 0.0;
    let mut events: u64 = 0;
    loop {
        let total = lambda_total + dep_rate + mig_rate;
        if total > opts.rate_guard {
            return Err(Error::RateOverflow {
                rate: total,
                guard: opts.rate_guard,
            });
        }
        if total == 0.0 {
            return Ok(x);
        }
        let e: f64 = rng.sample(Exp1);
        t += e / total;
        if t > horizon {
            return Ok(x);
        }
        events += 1;
        if events > opts.event_guard {
            return Err(Error::EventGuardExceeded(opts.event_guard));
        }

        let mut u = rng.gen::<f64>() * total;
        let kind = 'pick: {
            for i in 0..n {
                u -= params.lambda[i];
                if u < 0.0 {
                    break 'pick EventKind::Arrival { node: i as u8 };
                }
            }
            for i in 0..n {
                if x.0[i] > 0 {
                    u -= params.mu[i];
                    if u < 0.0 {
                        break 'pick EventKind::Departure { node: i as u8 };
                    }
                }
            }
            let mut choice = None;
            for i in 0..n {
                let mass = qout[i] * x.0[i] as f64;
                if u < mass {
                    for j in 0..n {
                        if j != i {
                            u -= qm[[i, j]] * x.0[i] as f64;
                            if u < 0.0 {
                                choice = Some(EventKind::Migration {
                                    from: i as u8,
                                    to: j as u8,
                                });
                                break;
                            }
                        }
                    }
                    if choice.is_none() {
                        // rounding spill inside the row: take the last edge
                        let j = (0..n).rev().find(|&j| j != i && qm[[i, j]] > 0.0).unwrap();
                        choice = Some(EventKind::Migration {
                            from: i as u8,
                            to: j as u8,
                        });
                    }
                    break;
                }
                u -= mass;
            }
            choice.unwrap_or_else(|| {
                // rounding spill over all categories: redraw is biased, so
                // take the last enabled migration edge instead
                let i = (0..n).rev().find(|&i| x.0[i] > 0 && qout[i] > 0.0).unwrap();
                let j = (0..n).rev().find(|&j| j != i && qm[[i, j]] > 0.0).unwrap();
                EventKind::Migration {
                    from: i as u8,
                    to: j as u8,
                }
            })
        };

        // incremental rate bookkeeping for the touched nodes only
        match kind {
            EventKind::Arrival { node } => {
                let i = node as usize;
                if x.0[i] == 0 {
                    dep_rate += params.mu[i];
                }
                mig_rate += qout[i];
            }
            EventKind::Departure { node } => {
                let i = node as usize;
                if x.0[i] == 1 {
                    dep_rate -= params.mu[i];
                }
                mig_rate -= qout[i];
            }
            EventKind::Migration { from, to } => {
                let (i, j) = (from as usize, to as usize);
                if x.0[i] == 1 {
                    dep_rate -= params.mu[i];
                }
                if x.0[j] == 0 {
                    dep_rate += params.mu[j];
                }
                mig_rate += qout[j] - qout[i];
            }
        }
        apply_event(&mut x, kind);
        if !observe(t, kind, &x) {
            return Ok(x);
        }
    }
}

/// Sample one trajectory and store its full event list.
pub fn simulate(
    params: &NetworkParams,
    q: &RateMatrix,
    x0: &State,
    horizon: f64,
    opts: &SimOptions,
    stream: &RngStream,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new(x0.clone(), horizon);
    let events = &mut traj.events;
    simulate_with(params, q, x0, horizon, opts, stream, |t, kind, _| {
        events.push(JumpEvent { time: t, kind });
        true
    })?;
    Ok(traj)
}

/// One labelled particle: birth time, birth node, and its jump chain.
#[derive(Debug, Clone)]
pub struct ParticlePath {
    pub birth: f64,
    /// Node occupied from `birth`, then after each recorded jump.
    pub nodes: Vec<u8>,
    /// Jump epochs, absolute time, paired with `nodes[1..]`.
    pub jumps: Vec<f64>,
}

impl ParticlePath {
    pub fn node_at(&self, t: f64) -> Option<u8> {
        if t < self.birth {
            return None;
        }
        let k = self.jumps.partition_point(|&s| s <= t);
        Some(self.nodes[k])
    }
}

/// Labelled representation of a pure-migration network: independent
/// Q-chains born at time 0 (the initial customers) and at Poisson(lambda)
/// epochs, plus the aggregated occupancy path.
#[derive(Debug, Clone)]
pub struct LabelledPaths {
    pub particles: Vec<ParticlePath>,
    pub aggregate: Trajectory,
}

/// Sample the labelled-particle construction. Requires `mu = 0`: every
/// particle lives forever and moves as an independent Q-chain.
pub fn simulate_labelled(
    params: &NetworkParams,
    q: &RateMatrix,
    x0: &State,
    horizon: f64,
    opts: &SimOptions,
    stream: &RngStream,
) -> Result<LabelledPaths> {
    check_dims(params, q, x0)?;
    if params.mu.iter().any(|&m| m > 0.0) {
        return Err(Error::InvalidParams(
            "labelled construction requires mu = 0".into(),
        ));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams("horizon must be positive".into()));
    }
    let n = q.n();
    let lambda_total = params.lambda_total();

    // births: initial particles at time 0, then a Poisson(lambda) stream
    let mut births: Vec<(f64, u8)> = Vec::new();
    for i in 0..n {
        for _ in 0..x0.0[i] {
            births.push((0.0, i as u8));
        }
    }
    if lambda_total > 0.0 {
        let mut rng = stream.substream(u64::MAX).rng();
        let mut t = 0.0;
        loop {
            let e: f64 = rng.sample(Exp1);
            t += e / lambda_total;
            if t > horizon {
                break;
            }
            let mut u = rng.gen::<f64>() * lambda_total;
            let mut node = n - 1;
            for i in 0..n {
                u -= params.lambda[i];
                if u < 0.0 {
                    node = i;
                    break;
                }
            }
            births.push((t, node as u8));
            if births.len() as u64 > opts.event_guard {
                return Err(Error::EventGuardExceeded(opts.event_guard));
            }
        }
    }

    // each particle is an independent Q-chain from its birth
    let qm = q.entries();
    let mut particles = Vec::with_capacity(births.len());
    let mut merged: Vec<(f64, u64, EventKind)> = Vec::new();
    for (k, &(birth, node0)) in births.iter().enumerate() {
        let mut rng = stream.substream(k as u64).rng();
        let mut p = ParticlePath {
            birth,
            nodes: vec![node0],
            jumps: Vec::new(),
        };
        if birth > 0.0 {
            merged.push((birth, k as u64, EventKind::Arrival { node: node0 }));
        }
        let mut t = birth;
        let mut at = node0 as usize;
        loop {
            let out = -qm[[at, at]];
            if out == 0.0 {
                break;
            }
            let e: f64 = rng.sample(Exp1);
            t += e / out;
            if t > horizon {
                break;
            }
            let mut u = rng.gen::<f64>() * out;
            let mut to = (0..n).rev().find(|&j| j != at && qm[[at, j]] > 0.0).unwrap();
            for j in 0..n {
                if j != at {
                    u -= qm[[at, j]];
                    if u < 0.0 {
                        to = j;
                        break;
                    }
                }
            }
            merged.push((
                t,
                k as u64,
                EventKind::Migration {
                    from: at as u8,
                    to: to as u8,
                },
            ));
            p.jumps.push(t);
            p.nodes.push(to as u8);
            at = to;
        }
        particles.push(p);
    }

    // ties have probability zero; order by stream id for determinism
    merged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut aggregate = Trajectory::new(x0.clone(), horizon);
    aggregate.events = merged
        .into_iter()
        .map(|(time, _, kind)| JumpEvent { time, kind })
        .collect();
    Ok(LabelledPaths {
        particles,
        aggregate,
    })
}

/// One transition of the enlarged process `(X, Y, Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleEventKind {
    /// `x + e_i`; increments the arrival counter.
    Arrival { node: u8 },
    /// `x - e_i, y + e_i`; increments the service counter.
    Death { node: u8 },
    /// `z + e_i`, fires when `x_i = 0`; increments the service counter.
    BlockedDeath { node: u8 },
    MigrateX { from: u8, to: u8 },
    MigrateY { from: u8, to: u8 },
    MigrateZ { from: u8, to: u8 },
}

#[derive(Debug, Clone, Copy)]
pub struct TripleEvent {
    pub time: f64,
    pub kind: TripleEventKind,
}

/// A sampled path of the enlarged process started from `(x0, 0, 0)`.
/// `X` is the network, `Y` the served-and-ghosted customers, `Z` the
/// services wasted on empty nodes.
#[derive(Debug, Clone)]
pub struct TriplePath {
    pub initial: State,
    pub events: Vec<TripleEvent>,
    pub horizon: f64,
}

/// Snapshot of the enlarged process at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleState {
    pub x: State,
    pub y: State,
    pub z: State,
    pub n_lambda: u64,
    pub n_mu: u64,
}

impl TripleState {
    fn start(x0: &State) -> Self {
        Self {
            x: x0.clone(),
            y: State::zeros(x0.n()),
            z: State::zeros(x0.n()),
            n_lambda: 0,
            n_mu: 0,
        }
    }

    fn apply(&mut self, kind: TripleEventKind) {
        match kind {
            TripleEventKind::Arrival { node } => {
                self.x.0[node as usize] += 1;
                self.n_lambda += 1;
            }
            TripleEventKind::Death { node } => {
                self.x.0[node as usize] -= 1;
                self.y.0[node as usize] += 1;
                self.n_mu += 1;
            }
            TripleEventKind::BlockedDeath { node } => {
                self.z.0[node as usize] += 1;
                self.n_mu += 1;
            }
            TripleEventKind::MigrateX { from, to } => {
                self.x.0[from as usize] -= 1;
                self.x.0[to as usize] += 1;
            }
            TripleEventKind::MigrateY { from, to } => {
                self.y.0[from as usize] -= 1;
                self.y.0[to as usize] += 1;
            }
            TripleEventKind::MigrateZ { from, to } => {
                self.z.0[from as usize] -= 1;
                self.z.0[to as usize] += 1;
            }
        }
    }
}

impl TriplePath {
    pub fn n(&self) -> usize {
        self.initial.n()
    }

    /// Iterate `(time, snapshot)` starting with the initial snapshot.
    pub fn replay(&self) -> impl Iterator<Item = (f64, TripleState)> + '_ {
        let mut st = TripleState::start(&self.initial);
        let mut idx = 0usize;
        std::iter::from_fn(move || {
            if idx == 0 {
                idx = 1;
                return Some((0.0, st.clone()));
            }
            let ev = self.events.get(idx - 1)?;
            idx += 1;
            st.apply(ev.kind);
            Some((ev.time, st.clone()))
        })
    }

    /// Project the `X` marginal as an ordinary trajectory.
    pub fn x_trajectory(&self) -> Trajectory {
        let mut traj = Trajectory::new(self.initial.clone(), self.horizon);
        for ev in &self.events {
            let kind = match ev.kind {
                TripleEventKind::Arrival { node } => EventKind::Arrival { node },
                TripleEventKind::Death { node } => EventKind::Departure { node },
                TripleEventKind::MigrateX { from, to } => EventKind::Migration { from, to },
                _ => continue,
            };
            traj.events.push(JumpEvent { time: ev.time, kind });
        }
        traj
    }

    /// CSV rows `time,event_kind,from_node,to_node,x_*,y_*,z_*,N_lambda,N_mu`.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        let n = self.n();
        write!(w, "time,event_kind,from_node,to_node")?;
        for tag in ["x", "y", "z"] {
            for i in 1..=n {
                write!(w, ",{tag}_{i}")?;
            }
        }
        writeln!(w, ",N_lambda,N_mu")?;
        let mut first = true;
        for (t, st) in self.replay() {
            let (kind, from, to) = if first {
                first = false;
                ("init".to_string(), String::new(), String::new())
            } else {
                let ev = self.events[0..].iter().find(|e| e.time == t).unwrap();
                match ev.kind {
                    TripleEventKind::Arrival { node } => {
                        ("arrival".into(), String::new(), (node + 1).to_string())
                    }
                    TripleEventKind::Death { node } => {
                        ("departure".into(), (node + 1).to_string(), String::new())
                    }
                    TripleEventKind::BlockedDeath { node } => {
                        ("blocked-departure".into(), (node + 1).to_string(), String::new())
                    }
                    TripleEventKind::MigrateX { from, to } => {
                        ("migration-x".into(), (from + 1).to_string(), (to + 1).to_string())
                    }
                    TripleEventKind::MigrateY { from, to } => {
                        ("migration-y".into(), (from + 1).to_string(), (to + 1).to_string())
                    }
                    TripleEventKind::MigrateZ { from, to } => {
                        ("migration-z".into(), (from + 1).to_string(), (to + 1).to_string())
                    }
                }
            };
            write!(w, "{t},{kind},{from},{to}")?;
            for v in [&st.x, &st.y, &st.z] {
                for &c in &v.0 {
                    write!(w, ",{c}")?;
                }
            }
            writeln!(w, ",{},{}", st.n_lambda, st.n_mu)?;
        }
        Ok(())
    }
}

/// Sample the enlarged process. Service clocks at every node ring at
/// rate `mu_i` unconditionally: on an occupied node the customer moves
/// to `Y`, on an empty node the service is wasted into `Z`. `X`, `Y`
/// and `Z` all migrate under `Q`.
pub fn simulate_triple(
    params: &NetworkParams,
    q: &RateMatrix,
    x0: &State,
    horizon: f64,
    opts: &SimOptions,
    stream: &RngStream,
) -> Result<TriplePath> {
    check_dims(params, q, x0)?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams("horizon must be positive".into()));
    }
    let n = q.n();
    let qm = q.entries();
    let qout: Vec<f64> = (0..n).map(|i| -qm[[i, i]]).collect();
    let lambda_total = params.lambda_total();
    let mu_total = params.mu_total();

    let mut rng = stream.rng();
    let mut st = TripleState::start(x0);
    let mut path = TriplePath {
        initial: x0.clone(),
        events: Vec::new(),
        horizon,
    };

    let mig = |v: &State, qout: &[f64]| -> f64 {
        (0..v.0.len()).map(|i| qout[i] * v.0[i] as f64).sum()
    };
    let mut t = 0.0;
    loop {
        let mig_x = mig(&st.x, &qout);
        let mig_y = mig(&st.y, &qout);
        let mig_z = mig(&st.z, &qout);
        let total = lambda_total + mu_total + mig_x + mig_y + mig_z;
        if total > opts.rate_guard {
            return Err(Error::RateOverflow {
                rate: total,
                guard: opts.rate_guard,
            });
        }
        if total == 0.0 {
            return Ok(path);
        }
        let e: f64 = rng.sample(Exp1);
        t += e / total;
        if t > horizon {
            return Ok(path);
        }
        if path.events.len() as u64 >= opts.event_guard {
            return Err(Error::EventGuardExceeded(opts.event_guard));
        }

        let mut u = rng.gen::<f64>() * total;
        let mut kind = None;
        'pick: {
            for i in 0..n {
                u -= params.lambda[i];
                if u < 0.0 {
                    kind = Some(TripleEventKind::Arrival { node: i as u8 });
                    break 'pick;
                }
            }
            for i in 0..n {
                u -= params.mu[i];
                if u < 0.0 {
                    kind = Some(if st.x.0[i] > 0 {
                        TripleEventKind::Death { node: i as u8 }
                    } else {
                        TripleEventKind::BlockedDeath { node: i as u8 }
                    });
                    break 'pick;
                }
            }
            for (which, v) in [(0u8, &st.x), (1, &st.y), (2, &st.z)] {
                for i in 0..n {
                    for j in 0..n {
                        if j != i {
                            u -= qm[[i, j]] * v.0[i] as f64;
                            if u < 0.0 {
                                kind = Some(match which {
                                    0 => TripleEventKind::MigrateX {
                                        from: i as u8,
                                        to: j as u8,
                                    },
                                    1 => TripleEventKind::MigrateY {
                                        from: i as u8,
                                        to: j as u8,
                                    },
                                    _ => TripleEventKind::MigrateZ {
                                        from: i as u8,
                                        to: j as u8,
                                    },
                                });
                                break 'pick;
                            }
                        }
                    }
                }
            }
        }
        let kind = match kind {
            Some(k) => k,
            // rounding spill: retry the draw at the same epoch
            None => continue,
        };
        st.apply(kind);
        path.events.push(TripleEvent { time: t, kind });
    }
}

/// Result of the total-population bookkeeping scan: `L(t) = L(0) +
/// N_lambda(t) - N_mu(t)` must hold exactly up to the first emptiness
/// epoch, and `L(t) >= L(0) + N_lambda(t) - N_mu(t)` everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingReport {
    /// First epoch at which some `X_i = 0` (the identity is only claimed
    /// before this).
    pub first_emptiness: Option<f64>,
    pub first_equality_violation: Option<f64>,
    pub first_inequality_violation: Option<f64>,
    pub epochs_checked: u64,
}

impl EmbeddingReport {
    pub fn pass(&self) -> bool {
        self.first_equality_violation.is_none() && self.first_inequality_violation.is_none()
    }
}

/// Verify the random-walk embedding of the total population on a sampled
/// (or hand-built) enlarged path.
pub fn check_mm1_embedding(tp: &TriplePath) -> EmbeddingReport {
    let l0 = tp.initial.total() as i64;
    let mut report = EmbeddingReport {
        first_emptiness: None,
        first_equality_violation: None,
        first_inequality_violation: None,
        epochs_checked: 0,
    };
    for (t, st) in tp.replay() {
        report.epochs_checked += 1;
        let l = st.x.total() as i64;
        let walk = l0 + st.n_lambda as i64 - st.n_mu as i64;
        if report.first_emptiness.is_none() && report.first_equality_violation.is_none() {
            // still in the pre-emptiness window: exact equality required
            if l != walk {
                report.first_equality_violation = Some(t);
            }
        }
        if l < walk && report.first_inequality_violation.is_none() {
            report.first_inequality_violation = Some(t);
        }
        if report.first_emptiness.is_none() && st.x.0.iter().any(|&c| c == 0) {
            report.first_emptiness = Some(t);
        }
    }
    report
}

/// Simulate two copies of the network from ordered initial states,
/// driven by shared clock families: one arrival clock per node, one
/// service clock per node, and per-edge migration clocks indexed by
/// particle rank. Pathwise the larger copy dominates componentwise and
/// the population gap never exceeds the initial gap.
pub fn simulate_coupled_pair(
    params: &NetworkParams,
    q: &RateMatrix,
    x0: &State,
    y0: &State,
    horizon: f64,
    opts: &SimOptions,
    stream: &RngStream,
) -> Result<(Trajectory, Trajectory)> {
    check_dims(params, q, x0)?;
    check_dims(params, q, y0)?;
    if !x0.dominates(y0) {
        return Err(Error::PreconditionViolated(
            "initial states must be componentwise ordered".into(),
        ));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams("horizon must be positive".into()));
    }
    let n = q.n();
    let qm = q.entries();
    let qout: Vec<f64> = (0..n).map(|i| -qm[[i, i]]).collect();
    let lambda_total = params.lambda_total();
    let mu_total = params.mu_total();

    let mut rng = stream.rng();
    let mut a = x0.clone();
    let mut b = y0.clone();
    let mut ta = Trajectory::new(x0.clone(), horizon);
    let mut tb = Trajectory::new(y0.clone(), horizon);

    let mut t = 0.0;
    let mut events: u64 = 0;
    loop {
        // clocks attached to the dominating copy cover both systems:
        // service clocks ring unconditionally, migration clocks are
        // indexed by rank below a_i >= b_i
        let mig_a: f64 = (0..n).map(|i| qout[i] * a.0[i] as f64).sum();
        let total = lambda_total + mu_total + mig_a;
        if total > opts.rate_guard {
            return Err(Error::RateOverflow {
                rate: total,
                guard: opts.rate_guard,
            });
        }
        if total == 0.0 {
            return Ok((ta, tb));
        }
        let e: f64 = rng.sample(Exp1);
        t += e / total;
        if t > horizon {
            return Ok((ta, tb));
        }
        events += 1;
        if events > opts.event_guard {
            return Err(Error::EventGuardExceeded(opts.event_guard));
        }

        let mut u = rng.gen::<f64>() * total;
        let mut hit_a: Option<EventKind> = None;
        let mut hit_b: Option<EventKind> = None;
        'pick: {
            for i in 0..n {
                u -= params.lambda[i];
                if u < 0.0 {
                    let ev = EventKind::Arrival { node: i as u8 };
                    hit_a = Some(ev);
                    hit_b = Some(ev);
                    break 'pick;
                }
            }
            for i in 0..n {
                u -= params.mu[i];
                if u < 0.0 {
                    let ev = EventKind::Departure { node: i as u8 };
                    if a.0[i] > 0 {
                        hit_a = Some(ev);
                    }
                    if b.0[i] > 0 {
                        hit_b = Some(ev);
                    }
                    break 'pick;
                }
            }
            for i in 0..n {
                let mass = qout[i] * a.0[i] as f64;
                if u < mass {
                    for j in 0..n {
                        if j != i {
                            u -= qm[[i, j]] * a.0[i] as f64;
                            if u < 0.0 {
                                // clock rank decides whether the smaller
                                // copy shares the move
                                let rank = rng.gen_range(0..a.0[i]);
                                let ev = EventKind::Migration {
                                    from: i as u8,
                                    to: j as u8,
                                };
                                hit_a = Some(ev);
                                if rank < b.0[i] {
                                    hit_b = Some(ev);
                                }
                                break 'pick;
                            }
                        }
                    }
                    break 'pick;
                }
                u -= mass;
            }
        }
        if let Some(ev) = hit_a {
            apply_event(&mut a, ev);
            ta.events.push(JumpEvent { time: t, kind: ev });
        }
        if let Some(ev) = hit_b {
            apply_event(&mut b, ev);
            tb.events.push(JumpEvent { time: t, kind: ev });
        }
        debug_assert!(a.dominates(&b));
    }
}

/// Output of the open/closed sandwich coupling: the network `X`, the
/// closed companion `U` built from the initial particles only, and the
/// step paths of the arrival and service counters.
#[derive(Debug, Clone)]
pub struct ClosedCouplingPath {
    pub x: Trajectory,
    pub u: Trajectory,
    /// `(time, N_lambda, N_mu)` after each counter change.
    pub counters: Vec<(f64, u64, u64)>,
}

impl ClosedCouplingPath {
    /// Counter values at time `t`.
    pub fn counts_at(&self, t: f64) -> (u64, u64) {
        let k = self.counters.partition_point(|&(s, _, _)| s <= t);
        if k == 0 {
            (0, 0)
        } else {
            (self.counters[k - 1].1, self.counters[k - 1].2)
        }
    }
}

/// Simulate the network together with its closed companion. Initial
/// particles keep migrating in `U` even after they are served in `X`;
/// later arrivals exist only in `X`. At every epoch
/// `U_i - N_mu <= X_i <= U_i + N_lambda` componentwise.
pub fn simulate_closed_coupling(
    params: &NetworkParams,
    q: &RateMatrix,
    x0: &State,
    horizon: f64,
    opts: &SimOptions,
    stream: &RngStream,
) -> Result<ClosedCouplingPath> {
    check_dims(params, q, x0)?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams("horizon must be positive".into()));
    }
    let n = q.n();
    let qm = q.entries();
    let qout: Vec<f64> = (0..n).map(|i| -qm[[i, i]]).collect();
    let lambda_total = params.lambda_total();
    let mu_total = params.mu_total();

    #[derive(Clone, Copy)]
    struct Particle {
        node: u8,
        initial: bool,
        alive: bool,
    }
    let mut particles: Vec<Particle> = Vec::new();
    for i in 0..n {
        for _ in 0..x0.0[i] {
            particles.push(Particle {
                node: i as u8,
                initial: true,
                alive: true,
            });
        }
    }

    let mut rng = stream.rng();
    let mut out = ClosedCouplingPath {
        x: Trajectory::new(x0.clone(), horizon),
        u: Trajectory::new(x0.clone(), horizon),
        counters: Vec::new(),
    };
    let mut n_lambda: u64 = 0;
    let mut n_mu: u64 = 0;
    let mut t = 0.0;
    let mut events: u64 = 0;
    loop {
        // dead non-initial particles are dropped at kill time, so every
        // stored particle carries migration mass for X, U or both
        let mig: f64 = particles.iter().map(|p| qout[p.node as usize]).sum();
        let total = lambda_total + mu_total + mig;
        if total > opts.rate_guard {
            return Err(Error::RateOverflow {
                rate: total,
                guard: opts.rate_guard,
            });
        }
        if total == 0.0 {
            return Ok(out);
        }
        let e: f64 = rng.sample(Exp1);
        t += e / total;
        if t > horizon {
            return Ok(out);
        }
        events += 1;
        if events > opts.event_guard {
            return Err(Error::EventGuardExceeded(opts.event_guard));
        }

        let mut u = rng.gen::<f64>() * total;
        'pick: {
            for i in 0..n {
                u -= params.lambda[i];
                if u < 0.0 {
                    particles.push(Particle {
                        node: i as u8,
                        initial: false,
                        alive: true,
                    });
                    n_lambda += 1;
                    out.x.events.push(JumpEvent {
                        time: t,
                        kind: EventKind::Arrival { node: i as u8 },
                    });
                    out.counters.push((t, n_lambda, n_mu));
                    break 'pick;
                }
            }
            for i in 0..n {
                u -= params.mu[i];
                if u < 0.0 {
                    n_mu += 1;
                    let live: Vec<usize> = particles
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| p.alive && p.node as usize == i)
                        .map(|(k, _)| k)
                        .collect();
                    if !live.is_empty() {
                        let k = live[rng.gen_range(0..live.len())];
                        if particles[k].initial {
                            // becomes a ghost: still drives U
                            particles[k].alive = false;
                        } else {
                            particles.swap_remove(k);
                        }
                        out.x.events.push(JumpEvent {
                            time: t,
                            kind: EventKind::Departure { node: i as u8 },
                        });
                    }
                    out.counters.push((t, n_lambda, n_mu));
                    break 'pick;
                }
            }
            for k in 0..particles.len() {
                let at = particles[k].node as usize;
                u -= qout[at];
                if u < 0.0 {
                    let mut to = (0..n).rev().find(|&j| j != at && qm[[at, j]] > 0.0).unwrap();
                    let mut w = rng.gen::<f64>() * qout[at];
                    for j in 0..n {
                        if j != at {
                            w -= qm[[at, j]];
                            if w < 0.0 {
                                to = j;
                                break;
                            }
                        }
                    }
                    let ev = EventKind::Migration {
                        from: at as u8,
                        to: to as u8,
                    };
                    particles[k].node = to as u8;
                    if particles[k].alive {
                        out.x.events.push(JumpEvent { time: t, kind: ev });
                    }
                    if particles[k].initial {
                        out.u.events.push(JumpEvent { time: t, kind: ev });
                    }
                    break 'pick;
                }
            }
        }
    }
}

/// Scan a sandwich-coupling path for violations of
/// `U_i - N_mu <= X_i <= U_i + N_lambda`; returns the first offending
/// epoch, or `None` if the inequalities hold everywhere.
pub fn check_sandwich(path: &ClosedCouplingPath) -> Option<f64> {
    let mut ux = path.u.replay().peekable();
    let mut u_state = path.u.initial.clone();
    for (t, x) in path.x.replay() {
        while let Some((s, _)) = ux.peek() {
            if *s <= t {
                u_state = ux.next().unwrap().1;
            } else {
                break;
            }
        }
        let (nl, nm) = path.counts_at(t);
        for i in 0..x.n() {
            let xi = x.0[i] as i64;
            let ui = u_state.0[i] as i64;
            if xi < ui - nm as i64 || xi > ui + nl as i64 {
                return Some(t);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectralData;

    fn sym2() -> RateMatrix {
        RateMatrix::new(ndarray::array![[-1.0, 1.0], [1.0, -1.0]]).unwrap()
    }

    #[test]
    fn deterministic_replay() {
        let q = sym2();
        let p = NetworkParams::new(vec![1.0, 0.5], vec![0.7, 0.7]).unwrap();
        let s = RngStream::new(7, 3);
        let a = simulate(&p, &q, &State(vec![2, 1]), 5.0, &SimOptions::default(), &s).unwrap();
        let b = simulate(&p, &q, &State(vec![2, 1]), 5.0, &SimOptions::default(), &s).unwrap();
        assert_eq!(a.events.len(), b.events.len());
        for (x, y) in a.events.iter().zip(&b.events) {
            assert_eq!(x.time.to_bits(), y.time.to_bits());
            assert_eq!(x.kind, y.kind);
        }
        a.check_well_formed().unwrap();
    }

    #[test]
    fn closed_single_particle_first_event() {
        let q = sym2();
        let p = NetworkParams::closed(2);
        for k in 0..20 {
            let traj = simulate(
                &p,
                &q,
                &State(vec![1, 0]),
                50.0,
                &SimOptions::default(),
                &RngStream::new(1, k),
            )
            .unwrap();
            assert_eq!(
                traj.events[0].kind,
                EventKind::Migration { from: 0, to: 1 }
            );
        }
    }

    #[test]
    fn empty_network_without_arrivals_stays_empty() {
        let q = sym2();
        let p = NetworkParams::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let traj = simulate(
            &p,
            &q,
            &State::zeros(2),
            100.0,
            &SimOptions::default(),
            &RngStream::new(1, 1),
        )
        .unwrap();
        assert!(traj.events.is_empty());
    }

    #[test]
    fn population_changes_by_at_most_one() {
        let q = sym2();
        let p = NetworkParams::new(vec![2.0, 1.0], vec![1.0, 1.0]).unwrap();
        let traj = simulate(
            &p,
            &q,
            &State(vec![3, 3]),
            20.0,
            &SimOptions::default(),
            &RngStream::new(11, 0),
        )
        .unwrap();
        let mut prev: Option<u64> = None;
        for (_, s) in traj.replay() {
            if let Some(p) = prev {
                let d = s.total() as i64 - p as i64;
                assert!(d.abs() <= 1);
            }
            prev = Some(s.total());
        }
    }

    #[test]
    fn labelled_requires_no_service() {
        let q = sym2();
        let p = NetworkParams::new(vec![1.0, 0.0], vec![0.5, 0.0]).unwrap();
        assert!(matches!(
            simulate_labelled(
                &p,
                &q,
                &State::zeros(2),
                1.0,
                &SimOptions::default(),
                &RngStream::new(1, 1)
            ),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn labelled_pure_poisson_count() {
        // no initial customers: |X(t)| counts the birth stream
        let q = sym2();
        let p = NetworkParams::new(vec![1.5, 0.5], vec![0.0, 0.0]).unwrap();
        let lp = simulate_labelled(
            &p,
            &q,
            &State::zeros(2),
            10.0,
            &SimOptions::default(),
            &RngStream::new(3, 9),
        )
        .unwrap();
        let final_total = lp.aggregate.final_state().total();
        assert_eq!(final_total, lp.particles.len() as u64);
        lp.aggregate.check_well_formed().unwrap();
        // particle lookup agrees with the aggregate at the horizon
        let mut counts = vec![0u32; 2];
        for part in &lp.particles {
            if let Some(node) = part.node_at(10.0) {
                counts[node as usize] += 1;
            }
        }
        assert_eq!(State(counts), lp.aggregate.final_state());
    }

    #[test]
    fn triple_without_service_is_plain_network() {
        let q = sym2();
        let p = NetworkParams::new(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let tp = simulate_triple(
            &p,
            &q,
            &State(vec![2, 0]),
            5.0,
            &SimOptions::default(),
            &RngStream::new(5, 5),
        )
        .unwrap();
        for (_, st) in tp.replay() {
            assert_eq!(st.y.total(), 0);
            assert_eq!(st.z.total(), 0);
        }
    }

    #[test]
    fn triple_identities_every_epoch() {
        let q = sym2();
        let p = NetworkParams::new(vec![1.0, 0.5], vec![2.0, 1.0]).unwrap();
        let tp = simulate_triple(
            &p,
            &q,
            &State(vec![4, 2]),
            10.0,
            &SimOptions::default(),
            &RngStream::new(42, 0),
        )
        .unwrap();
        let mut prev_z = 0u64;
        let mut prev_all_busy = tp.initial.0.iter().all(|&c| c > 0);
        for (_, st) in tp.replay() {
            // X = (X+Y) - (Y+Z) + Z componentwise is immediate from the
            // bookkeeping; check the counter identities instead
            let open_total = st.x.total() + st.y.total();
            assert_eq!(open_total, tp.initial.total() + st.n_lambda);
            assert_eq!(st.y.total() + st.z.total(), st.n_mu);
            // |Z| grows only from epochs where some X_i = 0
            if st.z.total() > prev_z {
                assert!(!prev_all_busy);
            }
            prev_z = st.z.total();
            prev_all_busy = st.x.0.iter().all(|&c| c > 0);
        }
        let report = check_mm1_embedding(&tp);
        assert!(report.pass(), "{report:?}");
    }

    #[test]
    fn embedding_detects_blocked_service() {
        // hand-built path: arrival, service draining the node, then a
        // blocked service; equality must stop holding after emptiness
        let tp = TriplePath {
            initial: State(vec![1, 1]),
            events: vec![
                TripleEvent {
                    time: 0.3,
                    kind: TripleEventKind::Death { node: 0 },
                },
                TripleEvent {
                    time: 0.7,
                    kind: TripleEventKind::BlockedDeath { node: 0 },
                },
                TripleEvent {
                    time: 0.9,
                    kind: TripleEventKind::Arrival { node: 1 },
                },
            ],
            horizon: 1.0,
        };
        let report = check_mm1_embedding(&tp);
        assert_eq!(report.first_emptiness, Some(0.3));
        assert!(report.pass());
        // at the last epoch L = 2 but L(0) + N_lambda - N_mu = 1
        let (_, last) = tp.replay().last().unwrap();
        assert!(last.x.total() as i64 > 2 + last.n_lambda as i64 - last.n_mu as i64 - 2);
    }

    #[test]
    fn coupled_pair_identical_states_stay_identical() {
        let q = sym2();
        let p = NetworkParams::new(vec![1.0, 1.0], vec![1.5, 0.5]).unwrap();
        let x0 = State(vec![3, 2]);
        let (a, b) = simulate_coupled_pair(
            &p,
            &q,
            &x0,
            &x0,
            5.0,
            &SimOptions::default(),
            &RngStream::new(8, 8),
        )
        .unwrap();
        assert_eq!(a.events.len(), b.events.len());
        assert_eq!(a.final_state(), b.final_state());
    }

    #[test]
    fn coupled_pair_rejects_unordered() {
        let q = sym2();
        let p = NetworkParams::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            simulate_coupled_pair(
                &p,
                &q,
                &State(vec![1, 2]),
                &State(vec![2, 1]),
                1.0,
                &SimOptions::default(),
                &RngStream::new(1, 1)
            ),
            Err(Error::PreconditionViolated(_))
        ));
    }

    #[test]
    fn coupled_pair_dominance_and_population_gap() {
        let q = sym2();
        let p = NetworkParams::new(vec![1.0, 0.5], vec![1.0, 1.5]).unwrap();
        for k in 0..50 {
            let x0 = State(vec![4, 3]);
            let y0 = State(vec![2, 3]);
            let gap = (x0.total() - y0.total()) as i64;
            let (a, b) = simulate_coupled_pair(
                &p,
                &q,
                &x0,
                &y0,
                5.0,
                &SimOptions::default(),
                &RngStream::new(99, k),
            )
            .unwrap();
            // merge the two replays over the union of epochs
            let mut bs = b.replay().peekable();
            let mut bstate = b.initial.clone();
            for (t, astate) in a.replay() {
                while let Some((s, _)) = bs.peek() {
                    if *s <= t {
                        bstate = bs.next().unwrap().1;
                    } else {
                        break;
                    }
                }
                assert!(astate.dominates(&bstate), "t = {t}");
                assert!(astate.total() as i64 - bstate.total() as i64 <= gap);
            }
        }
    }

    #[test]
    fn closed_coupling_sandwich_and_conservation() {
        let q = sym2();
        let p = NetworkParams::new(vec![1.0, 1.0], vec![1.0, 2.0]).unwrap();
        for k in 0..50 {
            let path = simulate_closed_coupling(
                &p,
                &q,
                &State(vec![3, 1]),
                5.0,
                &SimOptions::default(),
                &RngStream::new(123, k),
            )
            .unwrap();
            assert_eq!(check_sandwich(&path), None);
            for (_, u) in path.u.replay() {
                assert_eq!(u.total(), 4);
            }
        }
    }

    #[test]
    fn closed_coupling_degenerates_without_traffic() {
        let q = sym2();
        let p = NetworkParams::closed(2);
        let path = simulate_closed_coupling(
            &p,
            &q,
            &State(vec![2, 2]),
            5.0,
            &SimOptions::default(),
            &RngStream::new(4, 4),
        )
        .unwrap();
        assert_eq!(path.x.events.len(), path.u.events.len());
        assert_eq!(path.x.final_state(), path.u.final_state());
        assert!(path.counters.is_empty());
    }

    #[test]
    fn triple_csv_has_counter_columns() {
        let q = sym2();
        let p = NetworkParams::new(vec![1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let tp = simulate_triple(
            &p,
            &q,
            &State(vec![1, 0]),
            2.0,
            &SimOptions::default(),
            &RngStream::new(2, 2),
        )
        .unwrap();
        let mut buf = Vec::new();
        tp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .ends_with("x_1,x_2,y_1,y_2,z_1,z_2,N_lambda,N_mu"));
    }

    #[test]
    fn streaming_and_stored_paths_agree() {
        let q = sym2();
        let p = NetworkParams::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let s = RngStream::new(17, 17);
        let stored = simulate(&p, &q, &State(vec![2, 2]), 3.0, &SimOptions::default(), &s).unwrap();
        let mut seen = Vec::new();
        simulate_with(
            &p,
            &q,
            &State(vec![2, 2]),
            3.0,
            &SimOptions::default(),
            &s,
            |t, kind, _| {
                seen.push(JumpEvent { time: t, kind });
                true
            },
        )
        .unwrap();
        assert_eq!(stored.events.len(), seen.len());
        for (a, b) in stored.events.iter().zip(&seen) {
            assert_eq!(a.time.to_bits(), b.time.to_bits());
            assert_eq!(a.kind, b.kind);
        }
    }

    #[test]
    fn rate_guard_trips() {
        let q = sym2();
        let p = NetworkParams::new(vec![5.0, 5.0], vec![0.0, 0.0]).unwrap();
        let opts = SimOptions {
            rate_guard: 4.0,
            ..Default::default()
        };
        assert!(matches!(
            simulate(&p, &q, &State::zeros(2), 1.0, &opts, &RngStream::new(1, 1)),
            Err(Error::RateOverflow { .. })
        ));
    }

    #[test]
    fn spectral_data_not_needed_for_simulation_but_consistent() {
        // smoke check: the same matrix drives both subsystems
        let q = sym2();
        let sd = SpectralData::validate(&q).unwrap();
        assert_eq!(sd.n(), q.n());
    }
}
