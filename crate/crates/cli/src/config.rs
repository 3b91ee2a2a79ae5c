use std::fs;
use std::path::{Path, PathBuf};

use botnet_core::abm::{NodeState, Seeding, Vulnerability};
use botnet_core::dynamics::{Scenario, ThreatParams};
use botnet_core::equilibrium::FixedPointOptions;
use botnet_core::network::{Boundary, DegreeDistribution, NetworkParams, Region};
use botnet_core::optimizer::{CostModel, CostWeighting, DefenderTargets, SolverOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub lambda: f64,
    pub r: f64,
    pub rho: f64,
    pub p: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            lambda: 300.0,
            r: 0.1,
            rho: 0.95,
            p: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegreeSection {
    /// Tail mass allowed beyond the truncation degree.
    pub epsilon: f64,
    /// Explicit truncation degree; overrides `epsilon`.
    pub k_max: Option<usize>,
}

impl Default for DegreeSection {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            k_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThreatSection {
    pub gamma_b: f64,
    pub gamma_c: f64,
    pub beta: f64,
}

impl Default for ThreatSection {
    fn default() -> Self {
        Self {
            gamma_b: 0.001,
            gamma_c: 0.001,
            beta: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetsSection {
    pub tau_b_tilde: f64,
    pub tau_bi: f64,
}

impl Default for TargetsSection {
    fn default() -> Self {
        Self {
            tau_b_tilde: 0.9,
            tau_bi: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSection {
    pub a: f64,
    pub b: f64,
    pub weighting: CostWeighting,
}

impl Default for WeightsSection {
    fn default() -> Self {
        let c = CostModel::default();
        Self {
            a: c.a,
            b: c.b,
            weighting: c.weighting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub alpha0: f64,
    pub tol: f64,
    pub stable_iters: usize,
    pub max_iter: usize,
    pub feas_tol: f64,
    pub keep_informed_constraint: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverOptions::default();
        Self {
            alpha0: s.alpha0,
            tol: s.tol,
            stable_iters: s.stable_iters,
            max_iter: s.max_iter,
            feas_tol: s.feas_tol,
            keep_informed_constraint: s.keep_informed_constraint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Exact,
    Fo,
    Lse,
}

impl MethodChoice {
    pub fn name(self) -> &'static str {
        match self {
            MethodChoice::Exact => "exact",
            MethodChoice::Fo => "fo",
            MethodChoice::Lse => "lse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumSection {
    pub method: MethodChoice,
    pub mu_start: f64,
    pub mu_stop: f64,
    pub mu_points: usize,
    /// Degrees whose smoothed equilibrium curves are written.
    pub curve_degrees: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for EquilibriumSection {
    fn default() -> Self {
        let fp = FixedPointOptions::default();
        Self {
            method: MethodChoice::Exact,
            mu_start: 0.0,
            mu_stop: 0.006,
            mu_points: 61,
            curve_degrees: vec![5, 15],
            tol: fp.tol,
            max_iter: fp.max_iter,
            damping: fp.damping,
        }
    }
}

impl EquilibriumSection {
    pub fn mu_grid(&self) -> Result<Vec<f64>, CliError> {
        if self.mu_points < 2 || !(self.mu_stop > self.mu_start) || self.mu_start < 0.0 {
            return Err(CliError::Config(
                "equilibrium mu grid needs mu_points >= 2 and 0 <= mu_start < mu_stop".into(),
            ));
        }
        let step = (self.mu_stop - self.mu_start) / (self.mu_points - 1) as f64;
        Ok((0..self.mu_points).map(|i| self.mu_start + step * i as f64).collect())
    }

    pub fn fixed_point(&self) -> FixedPointOptions {
        FixedPointOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            damping: self.damping,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub gamma_b: Vec<f64>,
    pub tau_b_tilde: Vec<f64>,
    pub gamma_c: Vec<f64>,
    pub tau_bi: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            gamma_b: vec![0.0005, 0.00075, 0.001, 0.00125, 0.0015],
            tau_b_tilde: vec![0.6, 0.7, 0.8, 0.9],
            gamma_c: vec![0.0005, 0.00075, 0.001, 0.00125, 0.0015],
            tau_bi: vec![0.01, 0.05, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocationsSection {
    /// Location CSV; when set, `network` and `simulate` use this graph.
    pub path: Option<PathBuf>,
    pub range: f64,
}

impl Default for LocationsSection {
    fn default() -> Self {
        Self {
            path: None,
            range: 0.14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbmSection {
    pub region_width: f64,
    pub region_height: f64,
    pub boundary: Boundary,
    /// Defaults to 1e4 s on PPP graphs and 2.5e4 s on location graphs.
    pub phase1_end: Option<f64>,
    /// Defaults to three times `phase1_end`.
    pub t_end: Option<f64>,
    pub record_stride: f64,
    /// Empty means the global seed alone.
    pub seeds: Vec<u64>,
    /// Un-compromised targets to simulate; `tau_bi` comes from `targets`.
    pub targets: Vec<f64>,
    pub seeding: Seeding,
    pub seed_state: NodeState,
    pub vulnerability: Vulnerability,
    pub snapshot_times: Vec<f64>,
    pub record_events: bool,
}

impl Default for AbmSection {
    fn default() -> Self {
        Self {
            region_width: 1.0,
            region_height: 1.0,
            boundary: Boundary::Torus,
            phase1_end: None,
            t_end: None,
            record_stride: 10.0,
            seeds: Vec::new(),
            targets: vec![0.7, 0.8, 0.9],
            seeding: Seeding::default(),
            seed_state: NodeState::BotUninformed,
            vulnerability: Vulnerability::Hazard,
            snapshot_times: Vec::new(),
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub network: NetworkSection,
    pub degree: DegreeSection,
    pub threat: ThreatSection,
    pub targets: TargetsSection,
    pub weights: WeightsSection,
    pub eta: f64,
    pub solver: SolverSection,
    pub equilibrium: EquilibriumSection,
    pub sweep: SweepSection,
    pub locations: LocationsSection,
    pub abm: AbmSection,
    /// Not echoed, so runs into different directories write identical files.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            network: NetworkSection::default(),
            degree: DegreeSection::default(),
            threat: ThreatSection::default(),
            targets: TargetsSection::default(),
            weights: WeightsSection::default(),
            eta: 100.0,
            solver: SolverSection::default(),
            equilibrium: EquilibriumSection::default(),
            sweep: SweepSection::default(),
            locations: LocationsSection::default(),
            abm: AbmSection::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(path) => {
                let text = fs::read_to_string(path)?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
        }
    }

    /// Fills the derived defaults so the echoed file is complete.
    pub fn resolve(&mut self) {
        let located = self.locations.path.is_some();
        let phase1 = *self
            .abm
            .phase1_end
            .get_or_insert(if located { 2.5e4 } else { 1e4 });
        self.abm.t_end.get_or_insert(3.0 * phase1);
        if self.abm.seeds.is_empty() {
            self.abm.seeds.push(self.seed);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.net()?;
        self.threat()?;
        self.defender_targets()?;
        self.solver_options().validate()?;
        if !(self.degree.epsilon > 0.0 && self.degree.epsilon < 1.0) {
            return Err(CliError::Config(format!(
                "invalid parameter `epsilon`: must lie in (0, 1), got {}",
                self.degree.epsilon
            )));
        }
        if !(self.locations.range > 0.0) {
            return Err(CliError::Config("invalid parameter `range`: must be positive".into()));
        }
        self.equilibrium.mu_grid()?;
        if self.abm.targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(CliError::Config("invalid parameter `abm.targets`: must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn net(&self) -> Result<NetworkParams, CliError> {
        let n = &self.network;
        Ok(NetworkParams::new(n.lambda, n.r, n.rho, n.p)?)
    }

    pub fn threat(&self) -> Result<ThreatParams, CliError> {
        let t = &self.threat;
        Ok(ThreatParams::new(t.gamma_b, t.gamma_c, t.beta)?)
    }

    pub fn defender_targets(&self) -> Result<DefenderTargets, CliError> {
        Ok(DefenderTargets::new(self.targets.tau_b_tilde, self.targets.tau_bi)?)
    }

    pub fn cost(&self) -> CostModel {
        CostModel {
            a: self.weights.a,
            b: self.weights.b,
            weighting: self.weights.weighting,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        SolverOptions {
            eta: self.eta,
            alpha0: s.alpha0,
            tol: s.tol,
            stable_iters: s.stable_iters,
            max_iter: s.max_iter,
            feas_tol: s.feas_tol,
            keep_informed_constraint: s.keep_informed_constraint,
        }
    }

    /// Truncated Poisson law with the given mean.
    pub fn poisson(&self, mean: f64) -> Result<DegreeDistribution, CliError> {
        Ok(match self.degree.k_max {
            Some(k) => DegreeDistribution::poisson_with_kmax(mean, k),
            None => DegreeDistribution::poisson_with_epsilon(mean, self.degree.epsilon)?,
        })
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let net = self.net()?;
        let dist = self.poisson(net.mean_degree())?;
        Ok(Scenario::new(net, self.threat()?, dist)?)
    }

    pub fn region(&self) -> Region {
        Region::new(self.abm.region_width, self.abm.region_height)
    }

    /// Short hash of the configuration, ignoring where output goes.
    pub fn param_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"network": {"lamda": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("lamda"));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"colour": 1}"#).is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"network": {"lambda": 200}}"#).unwrap();
        assert_eq!(cfg.network.lambda, 200.0);
        assert_eq!(cfg.network.r, 0.1);
    }

    #[test]
    fn default_policy_has_25_degrees() {
        assert_eq!(ExperimentConfig::default().scenario().unwrap().k_max(), 25);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.param_hash(), b.param_hash());
        b.seed = 3;
        assert_ne!(a.param_hash(), b.param_hash());
    }

    #[test]
    fn resolve_fills_phase_times() {
        let mut cfg = ExperimentConfig::default();
        cfg.resolve();
        assert_eq!(cfg.abm.phase1_end, Some(1e4));
        assert_eq!(cfg.abm.t_end, Some(3e4));
        assert_eq!(cfg.abm.seeds, vec![0]);
    }
}
