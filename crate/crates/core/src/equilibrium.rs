//! Equilibrium populations of the mean-field system.
//!
//! Three routes are provided:
//!
//! * the exact self-consistent fixed point in the link probabilities,
//! * the first-order closed form, where the link probabilities become
//!   `min(mu / (rho gamma_b p E[K]), 1)` and a clamped expression for the
//!   informed-bot link probability,
//! * a smooth variant of the closed form, with the clamps replaced by
//!   log-sum-exp soft minimum/maximum of sharpness `eta`.
//!
//! The closed forms depend on the patching rate of the degree class being
//! evaluated, so they are per-degree functions of `mu`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{sigma1, sigma2, PatchingPolicy, Scenario};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactFixedPoint,
    FirstOrder,
    LseSmoothed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    /// Un-compromised proportion per degree `0 ..= k_max`.
    pub uncompromised: Vec<f64>,
    /// Informed-bot proportion per degree `0 ..= k_max`.
    pub informed: Vec<f64>,
    pub theta_uncompromised: f64,
    pub theta_informed: f64,
    pub method: Method,
    pub eta: Option<f64>,
    pub iterations: usize,
}

impl EquilibriumResult {
    /// `(sum_{k>=1} pi_k B~*_k, sum_{k>=1} pi_k BI*_k)`.
    pub fn weighted_totals(&self, scenario: &Scenario) -> (f64, f64) {
        let mut totals = (0.0, 0.0);
        for k in 1..self.uncompromised.len() {
            let w = scenario.dist.prob(k);
            totals.0 += w * self.uncompromised[k];
            totals.1 += w * self.informed[k];
        }
        totals
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new iterate; 1 is plain iteration.
    pub damping: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
            damping: 0.5,
        }
    }
}

/// Link probabilities `(theta_b, theta_bi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPair {
    pub uncompromised: f64,
    pub informed: f64,
}

/// Per-degree equilibrium populations for given link probabilities.
fn populations_at(
    theta: ThetaPair,
    policy: &PatchingPolicy,
    scenario: &Scenario,
) -> (Vec<f64>, Vec<f64>) {
    let s1 = sigma1(theta.uncompromised, &scenario.net, &scenario.threat);
    let s2 = sigma2(theta.informed, &scenario.net, &scenario.threat);
    let beta = scenario.threat.beta;
    let n = scenario.k_max() + 1;
    let mut b = vec![1.0; n];
    let mut bi = vec![0.0; n];
    for k in 0..n {
        let mu = policy.rate(k);
        let kf = k as f64;
        let infect = mu + kf * s1;
        if infect > 0.0 {
            b[k] = mu / infect;
        }
        let command = beta + mu + kf * s2;
        if infect > 0.0 && command > 0.0 {
            bi[k] = kf * kf * s1 * s2 / (infect * command);
        }
    }
    (b, bi)
}

fn aggregate(values: &[f64], scenario: &Scenario) -> f64 {
    let norm = scenario.dist.link_normalizer();
    let sum: f64 = values
        .iter()
        .enumerate()
        .map(|(k, v)| k as f64 * scenario.dist.prob(k) * v)
        .sum();
    (sum / norm).clamp(0.0, 1.0)
}

/// Solves the self-consistent equations by damped iteration on the link
/// probabilities. The un-compromised link probability starts from 0 and the
/// informed one from 1, so the iteration settles on the endemic solution
/// whenever one exists (the malware-free point is always a fixed point).
pub fn exact_equilibrium(
    policy: &PatchingPolicy,
    scenario: &Scenario,
    opts: FixedPointOptions,
) -> Result<EquilibriumResult> {
    if !(opts.tol > 0.0) {
        return Err(invalid("tol", format!("must be positive, got {}", opts.tol)));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(invalid("damping", format!("must lie in (0, 1], got {}", opts.damping)));
    }
    if !(scenario.dist.link_normalizer() > 0.0) {
        return Err(Error::Degenerate("zero mean degree: links are undefined".into()));
    }
    let mut theta = ThetaPair {
        uncompromised: 0.0,
        informed: 1.0,
    };
    let mut residual = f64::INFINITY;
    for iteration in 0..opts.max_iter {
        let (b, bi) = populations_at(theta, policy, scenario);
        let next = ThetaPair {
            uncompromised: aggregate(&b, scenario),
            informed: aggregate(&bi, scenario),
        };
        residual = (next.uncompromised - theta.uncompromised)
            .abs()
            .max((next.informed - theta.informed).abs());
        if residual <= opts.tol {
            return Ok(EquilibriumResult {
                uncompromised: b,
                informed: bi,
                theta_uncompromised: theta.uncompromised,
                theta_informed: theta.informed,
                method: Method::ExactFixedPoint,
                eta: None,
                iterations: iteration,
            });
        }
        let d = opts.damping;
        theta = ThetaPair {
            uncompromised: (1.0 - d) * theta.uncompromised + d * next.uncompromised,
            informed: (1.0 - d) * theta.informed + d * next.informed,
        };
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Largest patching rate that still changes the equilibrium,
/// `rho * gamma_b * p * E[K]`.
pub fn patching_rate_bound(scenario: &Scenario) -> f64 {
    scenario.infection_factor() * scenario.dist.mean_degree()
}

/// Refresh rate above which informed bots die out, `p * gamma_c * E[K]`.
pub fn max_refresh_rate(scenario: &Scenario) -> f64 {
    scenario.net.p * scenario.threat.gamma_c * scenario.dist.mean_degree()
}

/// Patching rate at which the first-order informed-bot link probability
/// reaches zero; 0 when refresh alone already clears informed bots.
pub fn eradication_rate(scenario: &Scenario) -> f64 {
    let (rho, p) = (scenario.net.rho, scenario.net.p);
    let (gb, gc, beta) = (
        scenario.threat.gamma_b,
        scenario.threat.gamma_c,
        scenario.threat.beta,
    );
    let denom = gc + rho * gb;
    if denom == 0.0 {
        return 0.0;
    }
    let mu = (rho * gb * gc * p * scenario.dist.mean_degree() - rho * gb * beta) / denom;
    mu.max(0.0)
}

/// Argument of the informed-bot clamp, `1 - (mu gamma_c + rho gamma_b (beta + mu)) / (E[K] rho p gamma_b gamma_c)`.
fn informed_argument(scenario: &Scenario, mu: f64) -> f64 {
    let (rho, p) = (scenario.net.rho, scenario.net.p);
    let (gb, gc, beta) = (
        scenario.threat.gamma_b,
        scenario.threat.gamma_c,
        scenario.threat.beta,
    );
    let denom = scenario.dist.mean_degree() * rho * p * gb * gc;
    if denom == 0.0 {
        return f64::NEG_INFINITY;
    }
    1.0 - (mu * gc + rho * gb * (beta + mu)) / denom
}

fn degenerate_bound(scenario: &Scenario) -> Result<f64> {
    let bound = patching_rate_bound(scenario);
    if bound > 0.0 {
        Ok(bound)
    } else {
        Err(Error::Degenerate(
            "rho * gamma_b * p * E[K] is zero: no malware pressure".into(),
        ))
    }
}

/// First-order link probabilities for a degree class patched at rate `mu`.
pub fn first_order_theta(scenario: &Scenario, mu: f64) -> Result<ThetaPair> {
    let bound = degenerate_bound(scenario)?;
    Ok(ThetaPair {
        uncompromised: (mu / bound).min(1.0),
        informed: informed_argument(scenario, mu).max(0.0),
    })
}

/// `(1/eta) ln(sum_i exp(eta x_i))`, shifted by the maximum.
pub fn soft_max(xs: &[f64], eta: f64) -> f64 {
    let top = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let sum: f64 = xs.iter().map(|x| (eta * (x - top)).exp()).sum();
    top + sum.ln() / eta
}

pub fn soft_min(xs: &[f64], eta: f64) -> f64 {
    let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
    -soft_max(&neg, eta)
}

/// Smooth link probabilities: soft minimum of `(1, mu / bound)` and soft
/// maximum of `(0, informed argument)`.
pub fn lse_theta(scenario: &Scenario, mu: f64, eta: f64) -> Result<ThetaPair> {
    if !(eta > 0.0) {
        return Err(invalid("eta", format!("must be positive, got {eta}")));
    }
    let bound = degenerate_bound(scenario)?;
    Ok(ThetaPair {
        uncompromised: soft_min(&[1.0, mu / bound], eta),
        informed: soft_max(&[0.0, informed_argument(scenario, mu)], eta),
    })
}

/// Un-compromised and informed-bot equilibrium of degree `k` with the
/// first-order (clamped) link probabilities substituted.
pub fn clamped_equilibrium(scenario: &Scenario, k: usize, mu: f64) -> Result<(f64, f64)> {
    let theta = first_order_theta(scenario, mu)?;
    let s1 = sigma1(theta.uncompromised, &scenario.net, &scenario.threat);
    let s2 = sigma2(theta.informed, &scenario.net, &scenario.threat);
    let kf = k as f64;
    let infect = mu + kf * s1;
    let command = scenario.threat.beta + mu + kf * s2;
    let b = if infect > 0.0 { mu / infect } else { 1.0 };
    let bi = if infect > 0.0 && command > 0.0 {
        kf * kf * s1 * s2 / (infect * command)
    } else {
        0.0
    };
    Ok((b, bi))
}

/// Closed-form smoothed equilibrium of degree `k`.
///
/// The informed-bot expression keeps the printed form of the closed-form
/// result: its second factor is `theta_bi / (beta + mu + k rho gamma_c + theta_bi)`.
pub fn smoothed_equilibrium(scenario: &Scenario, k: usize, mu: f64, eta: f64) -> Result<(f64, f64)> {
    let theta = lse_theta(scenario, mu, eta)?;
    let kf = k as f64;
    let one_minus = 1.0 - theta.uncompromised;
    let infect = mu + kf * scenario.infection_factor() * one_minus;
    let b = if infect > 0.0 { mu / infect } else { 1.0 };
    let (rho, gc) = (scenario.net.rho, scenario.threat.gamma_c);
    let first = if infect > 0.0 {
        kf * kf * rho * rho * scenario.threat.gamma_b * gc * scenario.net.p * one_minus / infect
    } else {
        0.0
    };
    let second_den = scenario.threat.beta + mu + kf * rho * gc + theta.informed;
    let second = if second_den > 0.0 {
        theta.informed / second_den
    } else {
        0.0
    };
    Ok((b, first * second))
}

/// Closed-form equilibrium over all degrees. `eta = None` selects the
/// clamped first-order form. The reported link probabilities are the
/// link-weighted aggregates of the returned populations.
pub fn closed_form_equilibrium(
    policy: &PatchingPolicy,
    scenario: &Scenario,
    eta: Option<f64>,
) -> Result<EquilibriumResult> {
    let n = scenario.k_max() + 1;
    let mut b = vec![1.0; n];
    let mut bi = vec![0.0; n];
    for k in 1..n {
        let mu = policy.rate(k);
        let (x, y) = match eta {
            Some(eta) => smoothed_equilibrium(scenario, k, mu, eta)?,
            None => clamped_equilibrium(scenario, k, mu)?,
        };
        b[k] = x;
        bi[k] = y;
    }
    Ok(EquilibriumResult {
        theta_uncompromised: aggregate(&b, scenario),
        theta_informed: aggregate(&bi, scenario),
        uncompromised: b,
        informed: bi,
        method: if eta.is_some() {
            Method::LseSmoothed
        } else {
            Method::FirstOrder
        },
        eta,
        iterations: 0,
    })
}

/// One row of the link-probability accuracy table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mu: f64,
    pub theta_bt_exact: f64,
    pub theta_bt_fo: f64,
    pub theta_bt_lse: f64,
    pub theta_bi_exact: f64,
    pub theta_bi_fo: f64,
    pub theta_bi_lse: f64,
}

/// Link probabilities from every method for uniform policies `mu_k = mu`.
pub fn compare_approximations(
    scenario: &Scenario,
    mu_grid: &[f64],
    eta: f64,
    opts: FixedPointOptions,
) -> Result<Vec<ComparisonRow>> {
    mu_grid
        .iter()
        .map(|&mu| {
            let policy = PatchingPolicy::uniform(scenario.k_max(), mu)?;
            let exact = exact_equilibrium(&policy, scenario, opts)?;
            let fo = first_order_theta(scenario, mu)?;
            let lse = lse_theta(scenario, mu, eta)?;
            Ok(ComparisonRow {
                mu,
                theta_bt_exact: exact.theta_uncompromised,
                theta_bt_fo: fo.uncompromised,
                theta_bt_lse: lse.uncompromised,
                theta_bi_exact: exact.theta_informed,
                theta_bi_fo: fo.informed,
                theta_bi_lse: lse.informed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ThreatParams;
    use crate::network::{DegreeDistribution, NetworkParams};

    fn scenario_with(threat: ThreatParams) -> Scenario {
        let net = NetworkParams::new(300.0, 0.1, 0.95, 0.7).unwrap();
        Scenario::new(net, threat, DegreeDistribution::poisson_with_kmax(net.mean_degree(), 25)).unwrap()
    }

    fn reference() -> Scenario {
        scenario_with(ThreatParams::new(0.001, 0.001, 0.002).unwrap())
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn no_patching_means_full_compromise() {
        let sc = reference();
        let eq = exact_equilibrium(&PatchingPolicy::uniform(25, 0.0).unwrap(), &sc, Default::default()).unwrap();
        assert!(eq.uncompromised[1..].iter().all(|&b| b == 0.0));
        assert_eq!(eq.theta_uncompromised, 0.0);
    }

    #[test]
    fn no_malware_means_no_bots() {
        let sc = scenario_with(ThreatParams::new(0.0, 0.001, 0.002).unwrap());
        let eq = exact_equilibrium(&PatchingPolicy::uniform(25, 0.001).unwrap(), &sc, Default::default()).unwrap();
        assert!(eq.uncompromised.iter().all(|&b| b == 1.0));
        assert!(eq.informed.iter().all(|&b| b == 0.0));
        assert!(1.0 - eq.theta_uncompromised < 1e-9);
    }

    #[test]
    fn fixed_point_residual_within_tolerance() {
        let sc = reference();
        let policy = PatchingPolicy::uniform(25, 0.001).unwrap();
        let opts = FixedPointOptions::default();
        let eq = exact_equilibrium(&policy, &sc, opts).unwrap();
        let (b, bi) = populations_at(
            ThetaPair {
                uncompromised: eq.theta_uncompromised,
                informed: eq.theta_informed,
            },
            &policy,
            &sc,
        );
        assert!((aggregate(&b, &sc) - eq.theta_uncompromised).abs() <= opts.tol);
        assert!((aggregate(&bi, &sc) - eq.theta_informed).abs() <= opts.tol);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let sc = reference();
        let policy = PatchingPolicy::uniform(25, 0.001).unwrap();
        let opts = FixedPointOptions {
            max_iter: 2,
            ..Default::default()
        };
        match exact_equilibrium(&policy, &sc, opts) {
            Err(Error::NoConvergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bounds_at_reference_parameters() {
        let sc = reference();
        // mpmath, 50 digits
        assert!(rel(patching_rate_bound(&sc), 0.006_267_477_343_911_637_5) < 1e-12);
        assert!(rel(max_refresh_rate(&sc), 0.006_597_344_572_538_565_8) < 1e-12);
        assert!(sc.threat.beta < max_refresh_rate(&sc));
        assert!(rel(eradication_rate(&sc), 0.002_239_731_971_236_737_2) < 1e-12);
        assert!(eradication_rate(&sc) < patching_rate_bound(&sc));
    }

    #[test]
    fn bounds_scale_as_expected() {
        let sc = reference();
        let none = scenario_with(ThreatParams::new(0.0, 0.001, 0.002).unwrap());
        assert_eq!(patching_rate_bound(&none), 0.0);
        let mut dense = sc.clone();
        dense.dist = DegreeDistribution::poisson_with_kmax(2.0 * sc.net.mean_degree(), 40);
        assert!(rel(patching_rate_bound(&dense), 2.0 * patching_rate_bound(&sc)) < 1e-15);
        let mut invulnerable = sc.clone();
        invulnerable.net.p = 0.0;
        assert_eq!(max_refresh_rate(&invulnerable), 0.0);
        let mut jammed = sc.clone();
        jammed.net.rho = 0.3;
        assert_eq!(max_refresh_rate(&jammed), max_refresh_rate(&sc));
    }

    #[test]
    fn eradication_vanishes_at_refresh_boundary() {
        let mut sc = reference();
        sc.threat.beta = max_refresh_rate(&sc);
        assert!(eradication_rate(&sc) < 1e-18);
    }

    #[test]
    fn eradication_rate_zeroes_first_order_informed_theta() {
        let sc = reference();
        let theta = first_order_theta(&sc, eradication_rate(&sc)).unwrap();
        assert!(theta.informed.abs() < 1e-12);
    }

    #[test]
    fn first_order_values() {
        let sc = reference();
        assert_eq!(first_order_theta(&sc, 0.0).unwrap().uncompromised, 0.0);
        let t = first_order_theta(&sc, 0.001).unwrap();
        assert!(rel(t.informed, 0.385_717_763_504_965_370_7) < 1e-12);
        assert_eq!(first_order_theta(&sc, patching_rate_bound(&sc)).unwrap().uncompromised, 1.0);
        assert_eq!(first_order_theta(&sc, 0.01).unwrap().uncompromised, 1.0);
        let none = scenario_with(ThreatParams::new(0.0, 0.001, 0.002).unwrap());
        assert!(first_order_theta(&none, 0.001).is_err());
    }

    #[test]
    fn lse_is_within_log_two_over_eta_of_clamped() {
        let sc = reference();
        let bound = patching_rate_bound(&sc);
        for &eta in &[10.0, 100.0, 1000.0] {
            for i in 0..=200 {
                let mu = bound * 1.2 * i as f64 / 200.0;
                let hard = first_order_theta(&sc, mu).unwrap();
                let soft = lse_theta(&sc, mu, eta).unwrap();
                assert!((hard.uncompromised - soft.uncompromised).abs() <= 2f64.ln() / eta);
                assert!((hard.informed - soft.informed).abs() <= 2f64.ln() / eta);
            }
        }
    }

    #[test]
    fn lse_at_the_clamp_point_is_offset_by_log_two() {
        let sc = reference();
        let eta = 100.0;
        let soft = lse_theta(&sc, patching_rate_bound(&sc), eta).unwrap();
        assert!((soft.uncompromised - (1.0 - 2f64.ln() / eta)).abs() < 1e-14);
        let soft = lse_theta(&sc, eradication_rate(&sc), eta).unwrap();
        assert!((soft.informed - 2f64.ln() / eta).abs() < 1e-12);
    }

    #[test]
    fn lse_is_overflow_safe() {
        let sc = reference();
        let t = lse_theta(&sc, 1.0, 1e6).unwrap();
        assert!(t.uncompromised.is_finite() && t.informed.is_finite());
        assert!(lse_theta(&sc, 0.001, 0.0).is_err());
    }

    #[test]
    fn smoothed_limits() {
        let sc = reference();
        let bound = patching_rate_bound(&sc);
        for k in [1, 5, 9, 15, 25] {
            assert_eq!(smoothed_equilibrium(&sc, k, 0.0, 100.0).unwrap().0, 0.0);
            let (b, bi) = smoothed_equilibrium(&sc, k, 10.0 * bound, 100.0).unwrap();
            assert!((1.0 - b) < 1e-3, "k={k} b={b}");
            assert!(bi < 1e-3);
        }
    }

    #[test]
    fn smoothed_informed_vanishes_before_full_clean_up() {
        let sc = reference();
        let bound = patching_rate_bound(&sc);
        for k in [5, 15] {
            let mut prev = (f64::NEG_INFINITY, f64::INFINITY);
            let mut informed_gone = None;
            let mut clean = None;
            for i in 0..=400 {
                let mu = 1.2 * bound * i as f64 / 400.0;
                let (b, bi) = smoothed_equilibrium(&sc, k, mu, 100.0).unwrap();
                assert!(b >= prev.0 - 1e-15, "B~ not increasing at k={k}");
                assert!(bi <= prev.1 + 1e-15, "BI not decreasing at k={k}");
                prev = (b, bi);
                if informed_gone.is_none() && bi < 1e-4 {
                    informed_gone = Some(mu);
                }
                if clean.is_none() && b > 0.99 {
                    clean = Some(mu);
                }
            }
            assert!(informed_gone.unwrap() < clean.unwrap());
        }
    }

    #[test]
    fn comparison_table_starts_at_full_compromise() {
        let sc = reference();
        let rows = compare_approximations(&sc, &[0.0, 0.002, 0.004], 100.0, Default::default()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].theta_bt_exact, 0.0);
        assert_eq!(rows[0].theta_bt_fo, 0.0);
        assert!(rows[0].theta_bt_lse.abs() < 2f64.ln() / 100.0);
    }

    #[test]
    fn soft_max_handles_large_arguments() {
        assert!((soft_max(&[1000.0, 0.0], 100.0) - 1000.0).abs() < 1e-12);
        assert!((soft_min(&[1.0, 1.0], 100.0) - (1.0 - 2f64.ln() / 100.0)).abs() < 1e-15);
    }
}
