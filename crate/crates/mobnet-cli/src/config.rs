//! Experiment configuration: a strict TOML schema (unknown keys are
//! errors) plus the conversions into library types. The parsed config
//! is echoed verbatim into the run manifest, so every struct here is
//! both serializable and comparable.

use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use mobnet::scaling::{DeltaSchedule, InitialRecipe, ScalingPlan};
use mobnet::simulator::SimOptions;
use mobnet::spectral::RateMatrix;
use mobnet::state::{NetworkParams, Regime, SimplexPoint, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    Kelly,
    Fluid,
    Drift,
    Trapping,
    SubcriticalExit,
    Ergodicity,
    MartingaleCheck,
    DeviationBound,
    IdentitySuite,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Kelly => "kelly",
            Kind::Fluid => "fluid",
            Kind::Drift => "drift",
            Kind::Trapping => "trapping",
            Kind::SubcriticalExit => "subcritical-exit",
            Kind::Ergodicity => "ergodicity",
            Kind::MartingaleCheck => "martingale-check",
            Kind::DeviationBound => "deviation-bound",
            Kind::IdentitySuite => "identity-suite",
        }
    }
}

/// The network section: per-node arrival and service rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

/// Row-major migration rates. Diagonal entries may be left at zero; they
/// are then filled with the negative off-diagonal row sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QSection {
    pub rows: Vec<Vec<f64>>,
}

impl QSection {
    pub fn build(&self) -> anyhow::Result<RateMatrix> {
        let n = self.rows.len();
        if self.rows.iter().any(|r| r.len() != n) {
            bail!("q.rows must be a square matrix");
        }
        let diagonal_given = (0..n).any(|i| self.rows[i][i] != 0.0);
        let q = if diagonal_given {
            let mut m = ndarray::Array2::zeros((n, n));
            for (i, row) in self.rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    m[[i, j]] = v;
                }
            }
            RateMatrix::new(m)
        } else {
            RateMatrix::with_filled_diagonal(&self.rows)
        };
        q.context("q.rows")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum InitialSection {
    Proportional(Vec<f64>),
    Corner(usize),
    Custom(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum DeltaSection {
    Fixed(f64),
    PowerLaw(f64),
}

/// The population-scaling ladder shared by the ensemble experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub ladder: Vec<u64>,
    pub replicas: usize,
    pub horizon: f64,
    pub initial: InitialSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<DeltaSection>,
}

impl PlanSection {
    pub fn build(&self) -> anyhow::Result<ScalingPlan> {
        let initial = match &self.initial {
            InitialSection::Proportional(rho) => InitialRecipe::Proportional(
                SimplexPoint::new(rho.clone()).context("plan.initial.proportional")?,
            ),
            InitialSection::Corner(i) => InitialRecipe::Corner(*i),
            InitialSection::Custom(w) => {
                InitialRecipe::Custom(w.iter().map(|&x| x as f64).collect())
            }
        };
        let delta = match self.delta {
            None => DeltaSchedule::Fixed(0.1),
            Some(DeltaSection::Fixed(d)) => DeltaSchedule::Fixed(d),
            Some(DeltaSection::PowerLaw(e)) => DeltaSchedule::PowerLaw { exponent: e },
        };
        let plan = ScalingPlan {
            ladder: self.ladder.clone(),
            replicas: self.replicas,
            horizon: self.horizon,
            initial,
            delta,
        };
        plan.validate().context("plan")?;
        Ok(plan)
    }
}

/// Kind-specific knobs. Everything is optional at parse time; each kind
/// checks for the fields it needs and rejects the rest by omission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    /// Observation window end (kelly), or fluid probe time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Fluid observation window `[s, t]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Initial fluid mass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    /// Kelly-scaling profile; defaults to the stationary distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ells: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    /// Sup-deviation tolerance of the report summaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// `plain` trajectories or the `triple` enlarged process.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representation: Option<Representation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    Plain,
    Triple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    /// Every artifact lands under this directory.
    pub output: PathBuf,
    /// Worker pool size; the MOBNET_WORKERS environment variable takes
    /// precedence when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub network: NetworkSection,
    pub q: QSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSection>,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).context("config does not match the schema")
    }

    pub fn params(&self) -> anyhow::Result<NetworkParams> {
        NetworkParams::new(self.network.lambda.clone(), self.network.mu.clone())
            .context("network")
    }

    pub fn plan(&self) -> anyhow::Result<ScalingPlan> {
        self.plan
            .as_ref()
            .with_context(|| format!("kind = {} needs a [plan] section", self.kind.name()))?
            .build()
    }

    pub fn x0(&self, n: usize) -> anyhow::Result<State> {
        let x0 = self
            .experiment
            .x0
            .as_ref()
            .with_context(|| format!("kind = {} needs experiment.x0", self.kind.name()))?;
        if x0.len() != n {
            bail!("experiment.x0 must have {n} entries");
        }
        Ok(State(x0.clone()))
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions::default()
    }
}

/// The run manifest: the config echoed next to the code version, enough
/// to reproduce the artifacts byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        kind = "simulate"
        seed = 7
        output = "out"
        [network]
        lambda = [0.5, 0.5]
        mu = [1.0, 1.0]
        [q]
        rows = [[0.0, 1.0], [1.0, 0.0]]
        [experiment]
        x0 = [3, 2]
        horizon = 1.0
    "#;

    #[test]
    fn minimal_config_parses_and_builds() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.kind, Kind::Simulate);
        cfg.params().unwrap();
        let q = cfg.q.build().unwrap();
        assert_eq!(q.entries()[[0, 0]], -1.0);
        assert_eq!(cfg.x0(2).unwrap(), State(vec![3, 2]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("seed = 7", "seed = 7\nfrobnicate = 1");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert!(format!("{err:#}").contains("schema"));
    }

    #[test]
    fn explicit_diagonal_is_honored() {
        let cfg = ExperimentConfig::parse(
            &MINIMAL.replace("[[0.0, 1.0], [1.0, 0.0]]", "[[-2.0, 2.0], [0.5, -0.5]]"),
        )
        .unwrap();
        let q = cfg.q.build().unwrap();
        assert_eq!(q.entries()[[0, 0]], -2.0);
        assert_eq!(q.entries()[[1, 1]], -0.5);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let echoed = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&echoed).unwrap(), cfg);
    }
}
