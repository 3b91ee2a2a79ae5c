use std::fs::File;
use std::io::BufReader;

use botnet_core::abm::{snapshot, two_phase_experiment, ExperimentSetup, GraphSource, SeedOutcome};
use botnet_core::dynamics::{PatchingPolicy, Scenario};
use botnet_core::equilibrium::{
    closed_form_equilibrium, compare_approximations, exact_equilibrium, smoothed_equilibrium, clamped_equilibrium,
};
use botnet_core::network::{
    empirical_degree_distribution, ingest_locations, poisson_pmf, sample_ppp_graph, SpatialGraph,
};
use botnet_core::optimizer::{
    informed_constraint_redundant, pruning_threshold, solve, sweep_cost, DefenderTargets, DualState, OptimizationReport,
    SweepAxis,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, MethodChoice};
use crate::error::CliError;
use crate::output::{num, OutputDir};

fn load_locations(cfg: &ExperimentConfig) -> Result<Option<SpatialGraph>, CliError> {
    match &cfg.locations.path {
        None => Ok(None),
        Some(path) => {
            let file = File::open(path)?;
            Ok(Some(ingest_locations(BufReader::new(file), cfg.locations.range)?))
        }
    }
}

pub fn network(cfg: &ExperimentConfig, sample_graph: bool) -> Result<(), CliError> {
    let out = OutputDir::create(cfg, "network")?;
    out.json("config.json", cfg)?;
    if let Some(graph) = load_locations(cfg)? {
        let dist = empirical_degree_distribution(&graph)?;
        let mean = dist.mean_degree();
        out.csv(
            "degree_distribution.csv",
            &[
                ("source", "empirical".into()),
                ("nodes", graph.len().to_string()),
                ("mean_degree", num(mean)),
                ("k_max", dist.k_max().to_string()),
            ],
            &["k", "pi_k", "poisson_pi_k"],
            dist.probs()
                .iter()
                .enumerate()
                .map(|(k, &p)| vec![k.to_string(), num(p), num(poisson_pmf(mean, k))]),
        )?;
        out.json("graph.json", &graph.export())?;
        return Ok(());
    }
    let net = cfg.net()?;
    let dist = cfg.poisson(net.mean_degree())?;
    out.csv(
        "degree_distribution.csv",
        &[
            ("source", "poisson".into()),
            ("mean_degree", num(dist.mean_degree())),
            ("k_max", dist.k_max().to_string()),
            ("tail_mass", num(dist.tail_mass())),
        ],
        &["k", "pi_k"],
        dist.probs()
            .iter()
            .enumerate()
            .map(|(k, &p)| vec![k.to_string(), num(p)]),
    )?;
    if sample_graph {
        let graph = sample_ppp_graph(&net, cfg.region(), cfg.seed, cfg.abm.boundary)?;
        out.json("graph.json", &graph.export())?;
    }
    Ok(())
}

pub fn equilibrium(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let sc = cfg.scenario()?;
    let grid = cfg.equilibrium.mu_grid()?;
    let fp = cfg.equilibrium.fixed_point();
    let out = OutputDir::create(cfg, "equilibrium")?;
    out.json("config.json", cfg)?;

    let rows = compare_approximations(&sc, &grid, cfg.eta, fp)?;
    out.csv(
        "comparison.csv",
        &[("eta", num(cfg.eta))],
        &[
            "mu",
            "theta_bt_exact",
            "theta_bt_fo",
            "theta_bt_lse",
            "theta_bi_exact",
            "theta_bi_fo",
            "theta_bi_lse",
        ],
        rows.iter().map(|r| {
            [
                r.mu,
                r.theta_bt_exact,
                r.theta_bt_fo,
                r.theta_bt_lse,
                r.theta_bi_exact,
                r.theta_bi_fo,
                r.theta_bi_lse,
            ]
            .map(num)
        }),
    )?;

    let method = cfg.equilibrium.method;
    let mut table = Vec::new();
    for &mu in &grid {
        let policy = PatchingPolicy::uniform(sc.k_max(), mu)?;
        let eq = match method {
            MethodChoice::Exact => exact_equilibrium(&policy, &sc, fp)?,
            MethodChoice::Fo => closed_form_equilibrium(&policy, &sc, None)?,
            MethodChoice::Lse => closed_form_equilibrium(&policy, &sc, Some(cfg.eta))?,
        };
        for k in 1..=sc.k_max() {
            table.push([num(mu), k.to_string(), num(eq.uncompromised[k]), num(eq.informed[k])]);
        }
    }
    out.csv(
        &format!("equilibrium_{}.csv", method.name()),
        &[("method", method.name().into())],
        &["mu", "k", "b_tilde_star", "b_i_star"],
        table,
    )?;

    let mut curves = Vec::new();
    for &k in &cfg.equilibrium.curve_degrees {
        for &mu in &grid {
            let (b, bi) = smoothed_equilibrium(&sc, k, mu, cfg.eta)?;
            let (b_fo, bi_fo) = clamped_equilibrium(&sc, k, mu)?;
            curves.push([k.to_string(), num(mu), num(b), num(bi), num(b_fo), num(bi_fo)]);
        }
    }
    out.csv(
        "curves.csv",
        &[("eta", num(cfg.eta))],
        &["k", "mu", "b_tilde_lse", "b_i_lse", "b_tilde_fo", "b_i_fo"],
        curves,
    )?;
    Ok(())
}

/// Report without the per-iteration trace, which goes to its own CSV.
#[derive(Serialize)]
struct ReportSummary<'a> {
    policy: &'a [f64],
    dual: DualState,
    scale: f64,
    primal_cost: f64,
    objective: f64,
    avg_b_tilde: f64,
    avg_bi: f64,
    exact_avg_b_tilde: f64,
    exact_avg_bi: f64,
    constraint_pruned: bool,
    pruning_threshold: f64,
    converged: bool,
    feasible: bool,
    slackness_b_tilde: f64,
    slackness_bi: f64,
    best_dual_value: f64,
    iterations: usize,
}

impl<'a> ReportSummary<'a> {
    fn new(r: &'a OptimizationReport, sc: &Scenario) -> Self {
        Self {
            policy: r.policy.rates(),
            dual: r.dual,
            scale: r.scale,
            primal_cost: r.primal_cost,
            objective: r.objective,
            avg_b_tilde: r.avg_b_tilde,
            avg_bi: r.avg_bi,
            exact_avg_b_tilde: r.exact_avg_b_tilde,
            exact_avg_bi: r.exact_avg_bi,
            constraint_pruned: r.constraint_pruned,
            pruning_threshold: pruning_threshold(sc),
            converged: r.converged,
            feasible: r.feasible,
            slackness_b_tilde: r.slackness_b_tilde,
            slackness_bi: r.slackness_bi,
            best_dual_value: r.best_dual_value,
            iterations: r.trace.len(),
        }
    }
}

pub fn optimize(cfg: &ExperimentConfig, sweep: Option<SweepAxis>) -> Result<(), CliError> {
    let sc = cfg.scenario()?;
    let targets = cfg.defender_targets()?;
    let cost = cfg.cost();
    let opts = cfg.solver_options();
    let out = OutputDir::create(cfg, "optimize")?;
    out.json("config.json", cfg)?;

    if let Some(axis) = sweep {
        let (name, values, taus, tau_name) = match axis {
            SweepAxis::GammaB => ("gamma_b", &cfg.sweep.gamma_b, &cfg.sweep.tau_b_tilde, "tau_b_tilde"),
            SweepAxis::GammaC => ("gamma_c", &cfg.sweep.gamma_c, &cfg.sweep.tau_bi, "tau_bi"),
        };
        let rows = sweep_cost(&sc, &targets, &cost, &opts, axis, values, taus)?;
        out.csv(
            &format!("sweep_{name}.csv"),
            &[],
            &[name, tau_name, "cost", "converged"],
            rows.iter()
                .map(|r| vec![num(r.value), num(r.tau), num(r.cost), r.converged.to_string()]),
        )?;
        let failed = rows.iter().filter(|r| !r.converged).count();
        if failed > 0 {
            return Err(CliError::NotConverged(format!(
                "{failed} of {} sweep points did not converge",
                rows.len()
            )));
        }
        return Ok(());
    }

    let report = solve(&targets, &sc, &cost, &opts)?;
    out.json("report.json", &ReportSummary::new(&report, &sc))?;
    out.csv(
        "policy.csv",
        &[
            ("tau_b_tilde", num(targets.tau_b_tilde)),
            ("tau_bi", num(targets.tau_bi)),
            ("pruned", informed_constraint_redundant(&sc, &targets).to_string()),
        ],
        &["k", "mu_star", "pi_k", "w_k"],
        (1..=sc.k_max()).map(|k| {
            vec![
                k.to_string(),
                num(report.policy.rate(k)),
                num(sc.dist.prob(k)),
                num(cost.weight(k)),
            ]
        }),
    )?;
    out.csv(
        "trace.csv",
        &[],
        &["iter", "zeta", "xi", "grad_zeta", "grad_xi", "dual_value", "avg_b_tilde", "avg_bi"],
        report.trace.iter().map(|t| {
            vec![
                t.iter.to_string(),
                num(t.zeta),
                num(t.xi),
                num(t.grad_zeta),
                num(t.grad_xi),
                num(t.dual_value),
                num(t.avg_b_tilde),
                num(t.avg_bi),
            ]
        }),
    )?;
    if !report.converged {
        return Err(CliError::NotConverged(format!(
            "dual iteration stopped after {} iterations without converging",
            report.trace.len()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct TargetSummary<'a> {
    targets: DefenderTargets,
    policy: &'a [f64],
    converged: bool,
    avg_b_tilde: f64,
    exact_avg_b_tilde: f64,
    seeds: &'a [SeedOutcome],
    mean_phase1_uncompromised: f64,
    mean_phase2_uncompromised: f64,
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let net = cfg.net()?;
    let threat = cfg.threat()?;
    let (scenario, source) = match load_locations(cfg)? {
        Some(graph) => {
            let dist = cfg.poisson(graph.mean_degree())?;
            (Scenario::new(net, threat, dist)?, GraphSource::Fixed(graph))
        }
        None => (
            cfg.scenario()?,
            GraphSource::Ppp {
                region: cfg.region(),
                boundary: cfg.abm.boundary,
            },
        ),
    };
    let phase1_end = cfg.abm.phase1_end.unwrap_or(1e4);
    let setup = ExperimentSetup {
        scenario,
        cost: cfg.cost(),
        solver: cfg.solver_options(),
        source,
        phase1_end,
        t_end: cfg.abm.t_end.unwrap_or(3.0 * phase1_end),
        record_stride: cfg.abm.record_stride,
        seeding: cfg.abm.seeding.clone(),
        seed_state: cfg.abm.seed_state,
        vulnerability: cfg.abm.vulnerability,
        record_events: cfg.abm.record_events,
    };
    let targets = cfg
        .abm
        .targets
        .iter()
        .map(|&t| DefenderTargets::new(t, cfg.targets.tau_bi))
        .collect::<Result<Vec<_>, _>>()?;
    let out = OutputDir::create(cfg, "simulate")?;
    out.json("config.json", cfg)?;

    let outcomes = two_phase_experiment(&setup, &targets, &cfg.abm.seeds, |target, seed, graph, sim, trace| {
        let tag = format!("tau{}_seed{seed}", target.tau_b_tilde);
        let extra = [("nodes", graph.len().to_string()), ("phase1_end", num(sim.phase1_end))];
        out.csv(
            &format!("trace_{tag}.csv"),
            &extra,
            &["t", "frac_uncompromised", "frac_bot_uninformed", "frac_bot_informed"],
            trace.samples.iter().map(|s| {
                [s.t, s.frac_uncompromised, s.frac_bot_uninformed, s.frac_bot_informed].map(num)
            }),
        )
        .map_err(to_core)?;
        for &t in &cfg.abm.snapshot_times {
            let rows = snapshot(graph, sim, t)?;
            out.csv(
                &format!("snapshot_{tag}_t{t}.csv"),
                &[("t", num(t))],
                &["node", "x", "y", "state"],
                rows.iter()
                    .map(|r| vec![r.node.to_string(), num(r.x), num(r.y), r.state.label().to_string()]),
            )
            .map_err(to_core)?;
        }
        if let Some(events) = &trace.events {
            out.csv_gz(
                &format!("events_{tag}.csv.gz"),
                &["t", "node", "from_state", "to_state"],
                events.iter().map(|e| {
                    vec![
                        num(e.t),
                        e.node.to_string(),
                        e.from.label().to_string(),
                        e.to.label().to_string(),
                    ]
                }),
            )
            .map_err(to_core)?;
        }
        Ok(())
    })?;

    let summary: Vec<TargetSummary> = outcomes
        .iter()
        .map(|o| TargetSummary {
            targets: o.targets,
            policy: o.report.policy.rates(),
            converged: o.report.converged,
            avg_b_tilde: o.report.avg_b_tilde,
            exact_avg_b_tilde: o.report.exact_avg_b_tilde,
            seeds: &o.seeds,
            mean_phase1_uncompromised: o.mean_phase1_uncompromised,
            mean_phase2_uncompromised: o.mean_phase2_uncompromised,
        })
        .collect();
    out.json("summary.json", &summary)?;
    if let Some(bad) = outcomes.iter().find(|o| !o.report.converged) {
        return Err(CliError::NotConverged(format!(
            "optimiser did not converge for tau_b_tilde = {}",
            bad.targets.tau_b_tilde
        )));
    }
    Ok(())
}

/// The experiment callback reports through the core error type.
fn to_core(e: CliError) -> botnet_core::Error {
    match e {
        CliError::Core(e) => e,
        CliError::Io(e) => botnet_core::Error::Io(e),
        CliError::Csv(e) => botnet_core::Error::Csv(e),
        other => botnet_core::Error::Io(std::io::Error::other(other.to_string())),
    }
}
