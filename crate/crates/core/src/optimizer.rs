//! Minimum-disruption patching by Lagrangian dual decomposition.
//!
//! The defender minimises `sum_k c_k w_k mu_k^2` subject to a floor on the
//! average un-compromised proportion and a ceiling on the average
//! informed-bot proportion. Relaxing both constraints makes the Lagrangian
//! separable in `mu_k`, so each degree is a scalar problem on
//! `[0, 1.05 * rho gamma_b p E[K]]`. Multipliers follow projected
//! subgradient ascent with step `alpha0 / sqrt(i + 1)`.
//!
//! Multipliers are iterated in units of `S = M^2 sum_k c_k w_k`, the cost of
//! patching every class at the rate bound `M`, so the same step size works
//! across parameter sets. `DualState` holds the unscaled values.

use serde::{Deserialize, Serialize};

use crate::dynamics::{PatchingPolicy, Scenario};
use crate::equilibrium::{exact_equilibrium, patching_rate_bound, smoothed_equilibrium, FixedPointOptions};
use crate::error::{invalid, Error, Result};

/// Search interval is `[0, UPPER_FACTOR * patching_rate_bound]`.
pub const UPPER_FACTOR: f64 = 1.05;
/// Coarse grid size of the inner scalar search.
pub const GRID_POINTS: usize = 512;
const GOLDEN_ITERS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenderTargets {
    pub tau_b_tilde: f64,
    pub tau_bi: f64,
}

impl DefenderTargets {
    pub fn new(tau_b_tilde: f64, tau_bi: f64) -> Result<Self> {
        let targets = Self { tau_b_tilde, tau_bi };
        targets.validate()?;
        Ok(targets)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_b_tilde) {
            return Err(invalid("tau_b_tilde", format!("must lie in [0, 1], got {}", self.tau_b_tilde)));
        }
        if !(0.0..=1.0).contains(&self.tau_bi) {
            return Err(invalid("tau_bi", format!("must lie in [0, 1], got {}", self.tau_bi)));
        }
        Ok(())
    }
}

/// How per-degree costs enter the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostWeighting {
    /// `sum_k pi_k phi_k(mu_k)`: expected cost per device.
    Expected,
    /// `sum_k phi_k(mu_k)`: every degree class counts once.
    #[default]
    PerClass,
}

/// `phi_k(mu) = w_k mu^2` with logistic `w_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub weighting: CostWeighting,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            a: 0.2,
            b: 10.0,
            weighting: CostWeighting::PerClass,
        }
    }
}

impl CostModel {
    pub fn weight(&self, k: usize) -> f64 {
        cost_weight(k, self.a, self.b)
    }

    /// Coefficient of `mu_k^2` in the objective.
    pub fn coefficient(&self, k: usize, scenario: &Scenario) -> f64 {
        match self.weighting {
            CostWeighting::Expected => scenario.dist.prob(k) * self.weight(k),
            CostWeighting::PerClass => self.weight(k),
        }
    }

    /// Expected cost `sum_k pi_k w_k mu_k^2`.
    pub fn expected_cost(&self, policy: &PatchingPolicy, scenario: &Scenario) -> f64 {
        (1..=scenario.k_max())
            .map(|k| scenario.dist.prob(k) * self.weight(k) * policy.rate(k).powi(2))
            .sum()
    }

    /// Objective value under the configured weighting.
    pub fn objective(&self, policy: &PatchingPolicy, scenario: &Scenario) -> f64 {
        (1..=scenario.k_max())
            .map(|k| self.coefficient(k, scenario) * policy.rate(k).powi(2))
            .sum()
    }
}

/// Logistic weight `1 / (1 + exp(-a (k - b)))`.
pub fn cost_weight(k: usize, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + (-a * (k as f64 - b)).exp())
}

/// Floor on the un-compromised target above which the informed-bot
/// constraint is implied; clamped below at 0.
pub fn pruning_threshold(scenario: &Scenario) -> f64 {
    let e = scenario.dist.mean_degree();
    let (rho, p) = (scenario.net.rho, scenario.net.p);
    let (gb, gc, beta) = (
        scenario.threat.gamma_b,
        scenario.threat.gamma_c,
        scenario.threat.beta,
    );
    let den = e * p * (rho * gb + gc);
    if den == 0.0 {
        return 0.0;
    }
    ((e * p * gc - beta) / den).max(0.0)
}

pub fn informed_constraint_redundant(scenario: &Scenario, targets: &DefenderTargets) -> bool {
    targets.tau_b_tilde >= pruning_threshold(scenario)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub zeta: f64,
    pub xi: f64,
    pub iteration: usize,
    pub dual_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub zeta: f64,
    pub xi: f64,
    pub grad_zeta: f64,
    pub grad_xi: f64,
    pub dual_value: f64,
    pub avg_b_tilde: f64,
    pub avg_bi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    pub eta: f64,
    pub alpha0: f64,
    /// Bound on the scaled multiplier change counted as stable.
    pub tol: f64,
    pub stable_iters: usize,
    pub max_iter: usize,
    pub feas_tol: f64,
    /// Keep the informed-bot constraint even when the pruning test holds.
    pub keep_informed_constraint: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eta: 100.0,
            alpha0: 1.0,
            tol: 1e-8,
            stable_iters: 10,
            max_iter: 50_000,
            feas_tol: 1e-3,
            keep_informed_constraint: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(invalid("eta", format!("must be positive, got {}", self.eta)));
        }
        if !(self.alpha0 >= 0.0) {
            return Err(invalid("alpha0", format!("must be non-negative, got {}", self.alpha0)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", format!("must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub policy: PatchingPolicy,
    pub dual: DualState,
    /// Multiplier unit `S`.
    pub scale: f64,
    /// `sum_k pi_k w_k mu_k^2`.
    pub primal_cost: f64,
    /// Objective under the configured weighting.
    pub objective: f64,
    pub avg_b_tilde: f64,
    pub avg_bi: f64,
    /// Same averages from the exact fixed point under the optimal policy.
    pub exact_avg_b_tilde: f64,
    pub exact_avg_bi: f64,
    pub constraint_pruned: bool,
    pub converged: bool,
    pub feasible: bool,
    /// `(zeta / S) |tau_b - avg_b|`.
    pub slackness_b_tilde: f64,
    /// `(xi / S) |avg_bi - tau_bi|`.
    pub slackness_bi: f64,
    pub best_dual_value: f64,
    pub trace: Vec<TraceRow>,
}

/// Per-degree scalar objective with its equilibrium curves tabulated on the
/// coarse grid; the tables do not depend on the multipliers.
struct DegreeProblem<'a> {
    scenario: &'a Scenario,
    k: usize,
    coef: f64,
    pi: f64,
    eta: f64,
    upper: f64,
    grid_b: Vec<f64>,
    grid_bi: Vec<f64>,
}

impl<'a> DegreeProblem<'a> {
    fn new(scenario: &'a Scenario, cost: &CostModel, k: usize, eta: f64) -> Result<Self> {
        let upper = UPPER_FACTOR * patching_rate_bound(scenario);
        let mut grid_b = Vec::with_capacity(GRID_POINTS);
        let mut grid_bi = Vec::with_capacity(GRID_POINTS);
        for j in 0..GRID_POINTS {
            let (b, bi) = smoothed_equilibrium(scenario, k, grid_point(upper, j), eta)?;
            grid_b.push(b);
            grid_bi.push(bi);
        }
        Ok(Self {
            scenario,
            k,
            coef: cost.coefficient(k, scenario),
            pi: scenario.dist.prob(k),
            eta,
            upper,
            grid_b,
            grid_bi,
        })
    }

    fn value(&self, mu: f64, b: f64, bi: f64, zeta: f64, xi: f64, pruned: bool) -> f64 {
        let mut v = self.coef * mu * mu - zeta * self.pi * b;
        if !pruned {
            v += xi * self.pi * bi;
        }
        v
    }

    fn eval(&self, mu: f64, zeta: f64, xi: f64, pruned: bool) -> f64 {
        let (b, bi) = smoothed_equilibrium(self.scenario, self.k, mu, self.eta)
            .expect("parameters validated when the problem was built");
        self.value(mu, b, bi, zeta, xi, pruned)
    }

    /// Returns `(mu*, objective)`.
    fn argmin(&self, zeta: f64, xi: f64, pruned: bool) -> (f64, f64) {
        let mut best = 0;
        let mut best_val = f64::INFINITY;
        for j in 0..GRID_POINTS {
            let v = self.value(grid_point(self.upper, j), self.grid_b[j], self.grid_bi[j], zeta, xi, pruned);
            if v < best_val {
                best_val = v;
                best = j;
            }
        }
        let lo = grid_point(self.upper, best.saturating_sub(1));
        let hi = grid_point(self.upper, (best + 1).min(GRID_POINTS - 1));
        let (mu, val) = golden_section(|x| self.eval(x, zeta, xi, pruned), lo, hi);
        if val < best_val {
            (mu, val)
        } else {
            (grid_point(self.upper, best), best_val)
        }
    }
}

fn grid_point(upper: f64, j: usize) -> f64 {
    upper * j as f64 / (GRID_POINTS - 1) as f64
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimiser of `c_k w_k mu^2 - zeta pi_k B~_k(mu) + xi pi_k BI_k(mu)` over
/// the search interval, using the smoothed equilibrium forms. With
/// `pruned` the informed-bot term is dropped.
pub fn inner_minimize(
    scenario: &Scenario,
    cost: &CostModel,
    k: usize,
    zeta: f64,
    xi: f64,
    eta: f64,
    pruned: bool,
) -> Result<f64> {
    if zeta < 0.0 || xi < 0.0 {
        return Err(invalid("multipliers", "must be non-negative"));
    }
    Ok(DegreeProblem::new(scenario, cost, k, eta)?.argmin(zeta, xi, pruned).0)
}

/// Brute-force argmin on `points` equally spaced values; smallest `mu` wins ties.
pub fn grid_argmin(
    scenario: &Scenario,
    cost: &CostModel,
    k: usize,
    zeta: f64,
    xi: f64,
    eta: f64,
    pruned: bool,
    points: usize,
) -> Result<f64> {
    if points < 2 {
        return Err(invalid("points", "need at least two grid points"));
    }
    let problem = DegreeProblem {
        scenario,
        k,
        coef: cost.coefficient(k, scenario),
        pi: scenario.dist.prob(k),
        eta,
        upper: UPPER_FACTOR * patching_rate_bound(scenario),
        grid_b: Vec::new(),
        grid_bi: Vec::new(),
    };
    smoothed_equilibrium(scenario, k, 0.0, eta)?;
    let mut best = (0.0, f64::INFINITY);
    for j in 0..points {
        let mu = problem.upper * j as f64 / (points - 1) as f64;
        let v = problem.eval(mu, zeta, xi, pruned);
        if v < best.1 {
            best = (mu, v);
        }
    }
    Ok(best.0)
}

/// Projected ascent step on the multipliers. `grad_zeta = tau_b - avg_b`,
/// `grad_xi = avg_bi - tau_bi`; `xi` stays at 0 when pruned.
pub fn dual_update(dual: &DualState, grad_zeta: f64, grad_xi: f64, alpha: f64, pruned: bool) -> DualState {
    DualState {
        zeta: (dual.zeta + alpha * grad_zeta).max(0.0),
        xi: if pruned {
            0.0
        } else {
            (dual.xi + alpha * grad_xi).max(0.0)
        },
        iteration: dual.iteration + 1,
        dual_value: dual.dual_value,
    }
}

/// `(sum_k pi_k B~_k, sum_k pi_k BI_k)` over `k >= 1` with the smoothed forms.
pub fn smoothed_averages(policy: &PatchingPolicy, scenario: &Scenario, eta: f64) -> Result<(f64, f64)> {
    let mut totals = (0.0, 0.0);
    for k in 1..=scenario.k_max() {
        let (b, bi) = smoothed_equilibrium(scenario, k, policy.rate(k), eta)?;
        let w = scenario.dist.prob(k);
        totals.0 += w * b;
        totals.1 += w * bi;
    }
    Ok(totals)
}

/// Runs the dual algorithm to convergence or `max_iter`.
pub fn solve(
    targets: &DefenderTargets,
    scenario: &Scenario,
    cost: &CostModel,
    opts: &SolverOptions,
) -> Result<OptimizationReport> {
    targets.validate()?;
    opts.validate()?;
    let k_max = scenario.k_max();
    let bound = patching_rate_bound(scenario);
    if !(bound > 0.0) {
        return Err(Error::Degenerate("no malware pressure: nothing to optimise".into()));
    }
    let coef_sum: f64 = (1..=k_max).map(|k| cost.coefficient(k, scenario)).sum();
    let scale = bound * bound * coef_sum;
    if !(scale > 0.0) {
        return Err(Error::Degenerate("patching cost vanishes for every degree".into()));
    }
    let problems = (1..=k_max)
        .map(|k| DegreeProblem::new(scenario, cost, k, opts.eta))
        .collect::<Result<Vec<_>>>()?;
    let pruned = !opts.keep_informed_constraint && informed_constraint_redundant(scenario, targets);

    let mut z = 1.0;
    let mut x = if pruned { 0.0 } else { 1.0 };
    let mut rates = vec![0.0; k_max];
    let mut trace = Vec::new();
    let mut stable = 0;
    let mut converged = false;
    let mut best_dual = f64::NEG_INFINITY;
    let mut last = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut iteration = 0;
    while iteration < opts.max_iter {
        let (zeta, xi) = (z * scale, x * scale);
        let mut lagrangian = 0.0;
        for (i, problem) in problems.iter().enumerate() {
            let (mu, val) = problem.argmin(zeta, xi, pruned);
            rates[i] = mu;
            lagrangian += val;
        }
        let policy = PatchingPolicy::new(rates.clone(), cost.a, cost.b)?;
        let (avg_b, avg_bi) = smoothed_averages(&policy, scenario, opts.eta)?;
        let grad_z = targets.tau_b_tilde - avg_b;
        let grad_x = avg_bi - targets.tau_bi;
        let mut dual_value = lagrangian + zeta * targets.tau_b_tilde;
        if !pruned {
            dual_value -= xi * targets.tau_bi;
        }
        best_dual = best_dual.max(dual_value);
        trace.push(TraceRow {
            iter: iteration,
            zeta,
            xi,
            grad_zeta: grad_z,
            grad_xi: grad_x,
            dual_value,
            avg_b_tilde: avg_b,
            avg_bi,
        });
        last = (avg_b, avg_bi, dual_value, grad_z, grad_x);
        let feasible = grad_z <= opts.feas_tol && grad_x <= opts.feas_tol;

        let alpha = opts.alpha0 / ((iteration + 1) as f64).sqrt();
        let next = dual_update(
            &DualState {
                zeta: z,
                xi: x,
                iteration,
                dual_value,
            },
            grad_z,
            grad_x,
            alpha,
            pruned,
        );
        let delta = (next.zeta - z).abs() + (next.xi - x).abs();
        stable = if delta < opts.tol { stable + 1 } else { 0 };
        iteration += 1;
        if stable >= opts.stable_iters && feasible {
            converged = true;
            break;
        }
        z = next.zeta;
        x = next.xi;
    }

    let policy = PatchingPolicy::new(rates, cost.a, cost.b)?;
    let exact = exact_equilibrium(&policy, scenario, FixedPointOptions::default())?;
    let (exact_b, exact_bi) = exact.weighted_totals(scenario);
    let (avg_b, avg_bi, dual_value, grad_z, grad_x) = last;
    Ok(OptimizationReport {
        primal_cost: cost.expected_cost(&policy, scenario),
        objective: cost.objective(&policy, scenario),
        dual: DualState {
            zeta: z * scale,
            xi: x * scale,
            iteration,
            dual_value,
        },
        scale,
        avg_b_tilde: avg_b,
        avg_bi,
        exact_avg_b_tilde: exact_b,
        exact_avg_bi: exact_bi,
        constraint_pruned: pruned,
        converged,
        feasible: grad_z <= opts.feas_tol && grad_x <= opts.feas_tol,
        slackness_b_tilde: z * grad_z.abs(),
        slackness_bi: x * grad_x.abs(),
        best_dual_value: best_dual,
        trace,
        policy,
    })
}

/// Threat parameter varied in a cost sweep, paired with the target it is
/// crossed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `gamma_b` against `tau_b_tilde`.
    GammaB,
    /// `gamma_c` against `tau_bi`.
    GammaC,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub tau: f64,
    pub cost: f64,
    pub converged: bool,
}

/// Expected total cost over a grid of one threat rate and one target. Rows
/// are ordered by target, then by parameter value.
pub fn sweep_cost(
    base: &Scenario,
    base_targets: &DefenderTargets,
    cost: &CostModel,
    opts: &SolverOptions,
    axis: SweepAxis,
    values: &[f64],
    taus: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len() * taus.len());
    for &tau in taus {
        for &value in values {
            let mut scenario = base.clone();
            let mut targets = *base_targets;
            match axis {
                SweepAxis::GammaB => {
                    scenario.threat.gamma_b = value;
                    targets.tau_b_tilde = tau;
                }
                SweepAxis::GammaC => {
                    scenario.threat.gamma_c = value;
                    targets.tau_bi = tau;
                }
            }
            scenario.threat.validate()?;
            let report = solve(&targets, &scenario, cost, opts)?;
            rows.push(SweepRow {
                value,
                tau,
                cost: report.primal_cost,
                converged: report.converged,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ThreatParams;
    use crate::network::{DegreeDistribution, NetworkParams};

    fn reference() -> Scenario {
        let net = NetworkParams::new(300.0, 0.1, 0.95, 0.7).unwrap();
        let threat = ThreatParams::new(0.001, 0.001, 0.002).unwrap();
        Scenario::new(net, threat, DegreeDistribution::poisson_with_kmax(net.mean_degree(), 25)).unwrap()
    }

    #[test]
    fn logistic_weights() {
        assert_eq!(cost_weight(10, 0.2, 10.0), 0.5);
        assert!((cost_weight(25, 0.2, 10.0) - 0.952_574_126_822_433_2).abs() < 1e-15);
        for k in 1..25 {
            assert!(cost_weight(k + 1, 0.2, 10.0) > cost_weight(k, 0.2, 10.0));
        }
    }

    #[test]
    fn pruning_threshold_at_reference_parameters() {
        let sc = reference();
        let t = pruning_threshold(&sc);
        assert!((t - 0.357_357_808_945_645_58).abs() / t < 1e-12);
        for tau in [0.6, 0.7, 0.8, 0.9] {
            assert!(informed_constraint_redundant(&sc, &DefenderTargets::new(tau, 0.2).unwrap()));
        }
        let mut fast_refresh = sc.clone();
        fast_refresh.threat.beta = 0.01;
        assert_eq!(pruning_threshold(&fast_refresh), 0.0);
    }

    #[test]
    fn targets_are_validated() {
        assert!(DefenderTargets::new(1.1, 0.2).is_err());
        assert!(DefenderTargets::new(0.5, -0.1).is_err());
    }

    #[test]
    fn zero_multipliers_mean_no_patching() {
        let sc = reference();
        for k in [1, 9, 25] {
            assert_eq!(inner_minimize(&sc, &CostModel::default(), k, 0.0, 0.0, 100.0, false).unwrap(), 0.0);
        }
    }

    #[test]
    fn huge_zeta_pushes_to_the_top_of_the_interval() {
        let sc = reference();
        let upper = UPPER_FACTOR * patching_rate_bound(&sc);
        let mu = inner_minimize(&sc, &CostModel::default(), 9, 1e6, 0.0, 100.0, true).unwrap();
        assert!(mu > 0.9 * upper, "mu = {mu}");
    }

    #[test]
    fn dual_update_projects_and_freezes() {
        let d = DualState {
            zeta: 0.1,
            xi: 0.1,
            iteration: 0,
            dual_value: 0.0,
        };
        let same = dual_update(&d, 0.3, -0.2, 0.0, false);
        assert_eq!((same.zeta, same.xi), (d.zeta, d.xi));
        let shrunk = dual_update(&d, -1.0, -1.0, 1.0, false);
        assert_eq!((shrunk.zeta, shrunk.xi), (0.0, 0.0));
        let pruned = dual_update(&d, 1.0, 1.0, 1.0, true);
        assert_eq!(pruned.xi, 0.0);
        assert!((pruned.zeta - 1.1).abs() < 1e-15);
    }

    #[test]
    fn vacuous_targets_give_zero_policy() {
        let sc = reference();
        let r = solve(
            &DefenderTargets::new(0.0, 1.0).unwrap(),
            &sc,
            &CostModel::default(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.policy.rates().iter().all(|&m| m == 0.0));
        assert_eq!(r.primal_cost, 0.0);
        assert_eq!((r.dual.zeta, r.dual.xi), (0.0, 0.0));
    }

    #[test]
    fn single_iteration_is_not_converged() {
        let sc = reference();
        let opts = SolverOptions {
            max_iter: 1,
            ..Default::default()
        };
        let r = solve(&DefenderTargets::new(0.9, 0.2).unwrap(), &sc, &CostModel::default(), &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn bad_solver_settings_rejected() {
        let sc = reference();
        let t = DefenderTargets::new(0.7, 0.2).unwrap();
        let opts = SolverOptions {
            eta: 0.0,
            ..Default::default()
        };
        assert!(solve(&t, &sc, &CostModel::default(), &opts).is_err());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::dynamics::ThreatParams;
    use crate::network::{DegreeDistribution, NetworkParams};
    use proptest::prelude::*;

    fn scenario(gb: f64, gc: f64, beta: f64) -> Scenario {
        let net = NetworkParams::new(300.0, 0.1, 0.95, 0.7).unwrap();
        let threat = ThreatParams::new(gb, gc, beta).unwrap();
        Scenario::new(net, threat, DegreeDistribution::poisson_with_kmax(net.mean_degree(), 25)).unwrap()
    }

    proptest! {
        #[test]
        fn dual_update_stays_feasible(
            zeta in 0.0f64..10.0, xi in 0.0f64..10.0,
            gz in -10.0f64..10.0, gx in -10.0f64..10.0,
            alpha in 0.0f64..5.0, pruned in any::<bool>(),
        ) {
            let dual = DualState { zeta, xi, iteration: 3, dual_value: 0.0 };
            let next = dual_update(&dual, gz, gx, alpha, pruned);
            prop_assert!(next.zeta >= 0.0 && next.xi >= 0.0);
            prop_assert!(!pruned || next.xi == 0.0);
            prop_assert_eq!(next.iteration, 4);
        }

        #[test]
        fn pruned_subproblem_ignores_the_informed_multiplier(
            k in 1usize..=25, zeta in 0.0f64..5.0, xi_a in 0.0f64..5.0, xi_b in 0.0f64..5.0,
        ) {
            let sc = scenario(0.001, 0.001, 0.002);
            let cost = CostModel::default();
            let scale = patching_rate_bound(&sc).powi(2);
            let a = inner_minimize(&sc, &cost, k, zeta * scale, xi_a * scale, 100.0, true).unwrap();
            let b = inner_minimize(&sc, &cost, k, zeta * scale, xi_b * scale, 100.0, true).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=UPPER_FACTOR * patching_rate_bound(&sc)).contains(&a));
        }

        #[test]
        fn pruning_matches_the_threshold(
            gb in 1e-4f64..3e-3, gc in 1e-4f64..3e-3, beta in 1e-4f64..5e-3,
            tau in 0.01f64..0.99,
        ) {
            let sc = scenario(gb, gc, beta);
            let t = pruning_threshold(&sc);
            prop_assert!((0.0..1.0).contains(&t));
            let targets = DefenderTargets::new(tau, 0.2).unwrap();
            prop_assert_eq!(informed_constraint_redundant(&sc, &targets), tau >= t);
        }
    }
}
