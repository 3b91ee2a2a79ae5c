//! Degree-based mean-field dynamics of un-compromised devices, un-informed
//! bots and informed bots.
//!
//! Only the un-compromised and informed-bot proportions are integrated; the
//! un-informed-bot proportion follows from closure (the three sum to one).
//! All vectors are indexed by degree `k = 0 ..= k_max`; degree-0 devices have
//! no links, so they neither infect nor get infected.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::network::{DegreeDistribution, NetworkParams};

const CLOSURE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreatParams {
    /// Malware spreading rate, packets/s.
    pub gamma_b: f64,
    /// Control-command propagation rate, packets/s.
    pub gamma_c: f64,
    /// Rate at which informed bots discard commands, 1/s.
    pub beta: f64,
}

impl ThreatParams {
    pub fn new(gamma_b: f64, gamma_c: f64, beta: f64) -> Result<Self> {
        let threat = Self {
            gamma_b,
            gamma_c,
            beta,
        };
        threat.validate()?;
        Ok(threat)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_b", self.gamma_b),
            ("gamma_c", self.gamma_c),
            ("beta", self.beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything the mean-field equations need besides the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub net: NetworkParams,
    pub threat: ThreatParams,
    pub dist: DegreeDistribution,
}

impl Scenario {
    pub fn new(net: NetworkParams, threat: ThreatParams, dist: DegreeDistribution) -> Result<Self> {
        net.validate()?;
        threat.validate()?;
        Ok(Self { net, threat, dist })
    }

    pub fn k_max(&self) -> usize {
        self.dist.k_max()
    }

    /// Per-link infection factor `rho * gamma_b * p`.
    pub fn infection_factor(&self) -> f64 {
        self.net.rho * self.threat.gamma_b * self.net.p
    }

    /// Per-link command factor `rho * gamma_c`.
    pub fn command_factor(&self) -> f64 {
        self.net.rho * self.threat.gamma_c
    }
}

/// Degree-dependent patching rates together with the logistic cost-weight
/// parameters `w_k = 1 / (1 + exp(-a (k - b)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchingPolicy {
    /// `rates[k - 1]` is the patching rate of degree-`k` devices, 1/s.
    rates: Vec<f64>,
    pub weight_a: f64,
    pub weight_b: f64,
}

impl PatchingPolicy {
    pub fn new(rates: Vec<f64>, weight_a: f64, weight_b: f64) -> Result<Self> {
        if let Some(bad) = rates.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
            return Err(invalid("mu", format!("patching rates must be non-negative, got {bad}")));
        }
        Ok(Self {
            rates,
            weight_a,
            weight_b,
        })
    }

    pub fn uniform(k_max: usize, mu: f64) -> Result<Self> {
        Self::new(vec![mu; k_max], 0.0, 0.0)
    }

    pub fn with_weights(mut self, a: f64, b: f64) -> Self {
        self.weight_a = a;
        self.weight_b = b;
        self
    }

    pub fn k_max(&self) -> usize {
        self.rates.len()
    }

    /// Patching rate for degree `k`. Isolated devices are never patched;
    /// degrees above `k_max` reuse the `k_max` rate.
    pub fn rate(&self, k: usize) -> f64 {
        match k {
            0 => 0.0,
            _ if self.rates.is_empty() => 0.0,
            _ => self.rates[(k - 1).min(self.rates.len() - 1)],
        }
    }

    /// Rates for `k = 1 ..= k_max`.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub t: f64,
    /// Un-compromised proportion per degree.
    pub uncompromised: Vec<f64>,
    /// Bots that have not received control commands.
    pub uninformed: Vec<f64>,
    /// Bots holding current control commands.
    pub informed: Vec<f64>,
}

impl PopulationState {
    pub fn malware_free(k_max: usize) -> Self {
        Self {
            t: 0.0,
            uncompromised: vec![1.0; k_max + 1],
            uninformed: vec![0.0; k_max + 1],
            informed: vec![0.0; k_max + 1],
        }
    }

    /// A fraction `bots` of every degree class `k >= 1` is compromised, of
    /// which a fraction `informed_share` already holds commands.
    pub fn seeded(k_max: usize, bots: f64, informed_share: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&bots) {
            return Err(invalid("bots", format!("must lie in [0, 1], got {bots}")));
        }
        if !(0.0..=1.0).contains(&informed_share) {
            return Err(invalid(
                "informed_share",
                format!("must lie in [0, 1], got {informed_share}"),
            ));
        }
        let mut state = Self::malware_free(k_max);
        for k in 1..=k_max {
            state.uncompromised[k] = 1.0 - bots;
            state.informed[k] = bots * informed_share;
            state.uninformed[k] = bots * (1.0 - informed_share);
        }
        Ok(state)
    }

    pub fn k_max(&self) -> usize {
        self.uncompromised.len() - 1
    }

    /// Largest deviation from closure over all degrees.
    pub fn closure_error(&self) -> f64 {
        (0..self.uncompromised.len())
            .map(|k| (self.uncompromised[k] + self.uninformed[k] + self.informed[k] - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_closure(&self) -> Result<()> {
        for k in 0..self.uncompromised.len() {
            let sum = self.uncompromised[k] + self.uninformed[k] + self.informed[k];
            if (sum - 1.0).abs() > CLOSURE_TOL
                || [self.uncompromised[k], self.uninformed[k], self.informed[k]]
                    .iter()
                    .any(|v| *v < -CLOSURE_TOL || *v > 1.0 + CLOSURE_TOL)
            {
                return Err(Error::ClosureViolation { degree: k, sum });
            }
        }
        Ok(())
    }

    /// `(sum pi_k B~_k, sum pi_k BI_k) / sum pi_k` over the truncated support.
    pub fn weighted_averages(&self, dist: &DegreeDistribution) -> (f64, f64) {
        let mut mass = 0.0;
        let (mut un, mut inf) = (0.0, 0.0);
        for k in 0..self.uncompromised.len() {
            let w = dist.prob(k);
            mass += w;
            un += w * self.uncompromised[k];
            inf += w * self.informed[k];
        }
        (un / mass, inf / mass)
    }

    /// Clamps into `[0, 1]` and rebuilds the un-informed share by closure.
    fn reclose(&mut self) {
        for k in 0..self.uncompromised.len() {
            let b = self.uncompromised[k].clamp(0.0, 1.0);
            let mut bi = self.informed[k].clamp(0.0, 1.0);
            if b + bi > 1.0 {
                bi = 1.0 - b;
            }
            self.uncompromised[k] = b;
            self.informed[k] = bi;
            self.uninformed[k] = 1.0 - b - bi;
        }
    }
}

/// Time derivatives of the three populations, per degree.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationRates {
    pub uncompromised: Vec<f64>,
    pub uninformed: Vec<f64>,
    pub informed: Vec<f64>,
}

impl PopulationRates {
    pub fn max_abs(&self) -> f64 {
        self.uncompromised
            .iter()
            .chain(&self.informed)
            .chain(&self.uninformed)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn link_probability(values: &[f64], dist: &DegreeDistribution) -> Result<f64> {
    let norm = dist.link_normalizer();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("zero mean degree: links are undefined".into()));
    }
    let sum: f64 = values
        .iter()
        .enumerate()
        .map(|(k, v)| k as f64 * dist.prob(k) * v)
        .sum();
    Ok((sum / norm).clamp(0.0, 1.0))
}

/// Probability that a link points to an un-compromised device.
pub fn link_prob_uncompromised(state: &PopulationState, dist: &DegreeDistribution) -> Result<f64> {
    link_probability(&state.uncompromised, dist)
}

/// Probability that a link points to an informed bot.
pub fn link_prob_informed(state: &PopulationState, dist: &DegreeDistribution) -> Result<f64> {
    link_probability(&state.informed, dist)
}

/// Per-link infection hazard `rho * gamma_b * p * (1 - theta_b)`.
pub fn sigma1(theta_uncompromised: f64, net: &NetworkParams, threat: &ThreatParams) -> f64 {
    net.rho * threat.gamma_b * net.p * (1.0 - theta_uncompromised)
}

/// Per-link command hazard `rho * gamma_c * theta_bi`.
pub fn sigma2(theta_informed: f64, net: &NetworkParams, threat: &ThreatParams) -> f64 {
    net.rho * threat.gamma_c * theta_informed
}

pub fn rhs(
    state: &PopulationState,
    policy: &PatchingPolicy,
    scenario: &Scenario,
) -> Result<PopulationRates> {
    let theta_b = link_prob_uncompromised(state, &scenario.dist)?;
    let theta_i = link_prob_informed(state, &scenario.dist)?;
    let s1 = sigma1(theta_b, &scenario.net, &scenario.threat);
    let s2 = sigma2(theta_i, &scenario.net, &scenario.threat);
    let beta = scenario.threat.beta;

    let n = state.uncompromised.len();
    let mut rates = PopulationRates {
        uncompromised: vec![0.0; n],
        uninformed: vec![0.0; n],
        informed: vec![0.0; n],
    };
    for k in 0..n {
        let mu = policy.rate(k);
        let kf = k as f64;
        let b = state.uncompromised[k];
        let bi = state.informed[k];
        let db = mu - (mu + kf * s1) * b;
        let dbi = kf * s2 - (mu + beta + kf * s2) * bi - kf * s2 * b;
        rates.uncompromised[k] = db;
        rates.informed[k] = dbi;
        rates.uninformed[k] = -(db + dbi);
    }
    Ok(rates)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Emit every `stride`-th step (the final state is always emitted).
    pub stride: usize,
}

impl IntegrateOptions {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }
}

fn axpy(base: &PopulationState, rates: &PopulationRates, h: f64) -> PopulationState {
    let shift = |x: &[f64], d: &[f64]| x.iter().zip(d).map(|(x, d)| x + h * d).collect();
    PopulationState {
        t: base.t + h,
        uncompromised: shift(&base.uncompromised, &rates.uncompromised),
        uninformed: shift(&base.uninformed, &rates.uninformed),
        informed: shift(&base.informed, &rates.informed),
    }
}

/// One classical RK4 step of size `h`, without clamping.
pub fn rk4_step(
    state: &PopulationState,
    policy: &PatchingPolicy,
    scenario: &Scenario,
    h: f64,
) -> Result<PopulationState> {
    let k1 = rhs(state, policy, scenario)?;
    let k2 = rhs(&axpy(state, &k1, h / 2.0), policy, scenario)?;
    let k3 = rhs(&axpy(state, &k2, h / 2.0), policy, scenario)?;
    let k4 = rhs(&axpy(state, &k3, h), policy, scenario)?;
    let combine = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|i| x[i] + h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
            .collect()
    };
    Ok(PopulationState {
        t: state.t + h,
        uncompromised: combine(
            &state.uncompromised,
            &k1.uncompromised,
            &k2.uncompromised,
            &k3.uncompromised,
            &k4.uncompromised,
        ),
        informed: combine(
            &state.informed,
            &k1.informed,
            &k2.informed,
            &k3.informed,
            &k4.informed,
        ),
        uninformed: combine(
            &state.uninformed,
            &k1.uninformed,
            &k2.uninformed,
            &k3.uninformed,
            &k4.uninformed,
        ),
    })
}

fn check_inputs(initial: &PopulationState, policy: &PatchingPolicy, scenario: &Scenario) -> Result<()> {
    if initial.uncompromised.len() != scenario.dist.probs().len()
        || initial.informed.len() != initial.uncompromised.len()
        || initial.uninformed.len() != initial.uncompromised.len()
    {
        return Err(invalid(
            "initial",
            "state and degree distribution must share the same k-indexing",
        ));
    }
    if policy.k_max() < scenario.k_max() {
        return Err(invalid(
            "policy",
            format!("covers degrees up to {} but k_max is {}", policy.k_max(), scenario.k_max()),
        ));
    }
    initial.check_closure()
}

/// Fixed-step RK4 from `initial` to `t_end`. Every step is clamped to
/// `[0, 1]` and re-closed.
pub fn integrate(
    initial: &PopulationState,
    policy: &PatchingPolicy,
    scenario: &Scenario,
    opts: IntegrateOptions,
) -> Result<Vec<PopulationState>> {
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(invalid("dt", format!("must be positive, got {}", opts.dt)));
    }
    if !(opts.t_end >= 0.0 && opts.t_end.is_finite()) {
        return Err(invalid("t_end", format!("must be non-negative, got {}", opts.t_end)));
    }
    check_inputs(initial, policy, scenario)?;

    let t0 = initial.t;
    let steps = (opts.t_end / opts.dt).ceil() as usize;
    let stride = opts.stride.max(1);
    let mut out = vec![initial.clone()];
    let mut state = initial.clone();
    for i in 1..=steps {
        let t_next = (t0 + i as f64 * opts.dt).min(t0 + opts.t_end);
        let h = t_next - state.t;
        state = rk4_step(&state, policy, scenario, h)?;
        state.t = t_next;
        state.reclose();
        if i % stride == 0 || i == steps {
            out.push(state.clone());
        }
    }
    Ok(out)
}

/// Integrates until the largest time derivative falls below `rate_tol`,
/// giving up (with [`Error::NoConvergence`]) at `t_max`.
pub fn integrate_to_steady_state(
    initial: &PopulationState,
    policy: &PatchingPolicy,
    scenario: &Scenario,
    dt: f64,
    rate_tol: f64,
    t_max: f64,
) -> Result<PopulationState> {
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    check_inputs(initial, policy, scenario)?;
    let mut state = initial.clone();
    let mut steps = 0usize;
    loop {
        let rate = rhs(&state, policy, scenario)?.max_abs();
        if rate < rate_tol {
            return Ok(state);
        }
        if state.t - initial.t >= t_max {
            return Err(Error::NoConvergence {
                iterations: steps,
                residual: rate,
            });
        }
        state = rk4_step(&state, policy, scenario, dt)?;
        state.reclose();
        steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dist() -> DegreeDistribution {
        DegreeDistribution::from_probabilities(vec![0.0, 0.5, 0.5], 1.5).unwrap()
    }

    fn toy_state(b: [f64; 2], bi: [f64; 2]) -> PopulationState {
        PopulationState {
            t: 0.0,
            uncompromised: vec![1.0, b[0], b[1]],
            informed: vec![0.0, bi[0], bi[1]],
            uninformed: vec![0.0, 1.0 - b[0] - bi[0], 1.0 - b[1] - bi[1]],
        }
    }

    fn reference() -> (NetworkParams, ThreatParams) {
        (
            NetworkParams::new(300.0, 0.1, 0.95, 0.7).unwrap(),
            ThreatParams::new(0.001, 0.001, 0.002).unwrap(),
        )
    }

    #[test]
    fn link_probabilities_on_toy_distribution() {
        let d = toy_dist();
        assert_eq!(link_prob_uncompromised(&toy_state([1.0, 1.0], [0.0, 0.0]), &d).unwrap(), 1.0);
        assert_eq!(link_prob_uncompromised(&toy_state([0.0, 0.0], [0.0, 0.0]), &d).unwrap(), 0.0);
        let t = link_prob_uncompromised(&toy_state([1.0, 0.0], [0.0, 0.0]), &d).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
        let t = link_prob_informed(&toy_state([0.0, 0.0], [0.0, 1.0]), &d).unwrap();
        assert!((t - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(link_prob_informed(&toy_state([0.0, 0.0], [1.0, 1.0]), &d).unwrap(), 1.0);
    }

    #[test]
    fn zero_mean_degree_is_an_error() {
        let d = DegreeDistribution::from_probabilities(vec![1.0], 0.0).unwrap();
        let s = PopulationState::malware_free(0);
        assert!(link_prob_uncompromised(&s, &d).is_err());
    }

    #[test]
    fn sigma_values_at_reference_parameters() {
        let (net, threat) = reference();
        assert!((sigma1(0.0, &net, &threat) - 6.65e-4).abs() < 1e-18);
        assert_eq!(sigma1(1.0, &net, &threat), 0.0);
        assert!((sigma2(1.0, &net, &threat) - 9.5e-4).abs() < 1e-18);
        assert_eq!(sigma2(0.0, &net, &threat), 0.0);
        let silent = ThreatParams::new(0.001, 0.0, 0.002).unwrap();
        assert_eq!(sigma2(0.7, &net, &silent), 0.0);
        let jammed = NetworkParams { rho: 0.0, ..net };
        assert_eq!(sigma1(0.3, &jammed, &threat), 0.0);
    }

    fn reference_scenario() -> Scenario {
        let (net, threat) = reference();
        Scenario::new(net, threat, DegreeDistribution::poisson_with_kmax(net.mean_degree(), 25)).unwrap()
    }

    #[test]
    fn malware_free_state_is_stationary() {
        let sc = reference_scenario();
        let policy = PatchingPolicy::uniform(25, 0.003).unwrap();
        let d = rhs(&PopulationState::malware_free(25), &policy, &sc).unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn refresh_drains_fully_informed_population() {
        let sc = reference_scenario();
        let policy = PatchingPolicy::uniform(25, 0.0).unwrap();
        let mut s = PopulationState::malware_free(25);
        for k in 1..=25 {
            s.uncompromised[k] = 0.0;
            s.informed[k] = 1.0;
        }
        // degree 0 stays malware-free and unlinked
        let d = rhs(&s, &policy, &sc).unwrap();
        for k in 1..=25 {
            assert!((d.informed[k] + sc.threat.beta).abs() < 1e-15);
        }
    }

    #[test]
    fn derivatives_sum_to_zero() {
        let sc = reference_scenario();
        let policy = PatchingPolicy::uniform(25, 0.002).unwrap();
        let s = PopulationState::seeded(25, 0.3, 0.4).unwrap();
        let d = rhs(&s, &policy, &sc).unwrap();
        for k in 0..=25 {
            assert!((d.uncompromised[k] + d.uninformed[k] + d.informed[k]).abs() < 1e-18);
        }
    }

    #[test]
    fn zero_rates_leave_state_constant() {
        let (net, _) = reference();
        let sc = Scenario::new(
            net,
            ThreatParams::new(0.0, 0.0, 0.0).unwrap(),
            DegreeDistribution::poisson_with_kmax(net.mean_degree(), 25),
        )
        .unwrap();
        let policy = PatchingPolicy::uniform(25, 0.0).unwrap();
        let s = PopulationState::seeded(25, 0.2, 0.5).unwrap();
        let traj = integrate(&s, &policy, &sc, IntegrateOptions::new(100.0, 1.0)).unwrap();
        let last = traj.last().unwrap();
        assert_eq!(last.uncompromised, s.uncompromised);
        assert_eq!(last.informed, s.informed);
    }

    #[test]
    fn integrate_rejects_bad_inputs() {
        let sc = reference_scenario();
        let policy = PatchingPolicy::uniform(25, 0.0).unwrap();
        let s = PopulationState::seeded(25, 0.2, 0.5).unwrap();
        assert!(integrate(&s, &policy, &sc, IntegrateOptions::new(10.0, 0.0)).is_err());
        let mut broken = s.clone();
        broken.uninformed[3] += 0.1;
        assert!(matches!(
            integrate(&broken, &policy, &sc, IntegrateOptions::new(10.0, 1.0)),
            Err(Error::ClosureViolation { degree: 3, .. })
        ));
    }

    #[test]
    fn stride_controls_emitted_samples() {
        let sc = reference_scenario();
        let policy = PatchingPolicy::uniform(25, 0.001).unwrap();
        let s = PopulationState::seeded(25, 0.01, 0.0).unwrap();
        let traj = integrate(&s, &policy, &sc, IntegrateOptions::new(100.0, 1.0).with_stride(10)).unwrap();
        assert_eq!(traj.len(), 11);
        assert!((traj.last().unwrap().t - 100.0).abs() < 1e-12);
    }

    #[test]
    fn strong_patching_clears_the_network() {
        let sc = reference_scenario();
        let policy = PatchingPolicy::uniform(25, 0.05).unwrap();
        let s = PopulationState::seeded(25, 0.9, 0.5).unwrap();
        let traj = integrate(&s, &policy, &sc, IntegrateOptions::new(1e6, 10.0).with_stride(10_000)).unwrap();
        let last = traj.last().unwrap();
        let worst = last.uncompromised.iter().map(|b| (1.0 - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn unpatched_malware_takes_over() {
        let sc = reference_scenario();
        let policy = PatchingPolicy::uniform(25, 0.0).unwrap();
        let s = PopulationState::seeded(25, 0.01, 0.0).unwrap();
        let traj = integrate(&s, &policy, &sc, IntegrateOptions::new(1e5, 1.0).with_stride(1000)).unwrap();
        let (avg_b, _) = traj.last().unwrap().weighted_averages(&sc.dist);
        // Only the isolated class (pi_0 ~ 8e-5) stays clean.
        assert!(avg_b < 1e-3, "{avg_b}");
    }
}
