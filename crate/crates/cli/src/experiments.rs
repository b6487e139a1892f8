use std::time::Instant;

use clt_lab::blocks::{block_partition, block_sums, optimal_block_length};
use clt_lab::generators::{gen_iid, gen_m_dependent};
use clt_lab::markov::{poisson_solve, poisson_solve_schedule, stationary_dist};
use clt_lab::rates::{
    clt_distance_curve, dependence_functional_exact, estimate_dependence_functional, exact_chain_w1,
    DependenceFunctional, DependenceSource, Setting,
};
use clt_lab::regeneration::{
    build_minorization, cycle_increments, fit_geometric_tail, kn_concentration, pooled_mean_cycle,
    pooled_skeleton_lengths, simulate_traces, Potential,
};
use clt_lab::rng::derive_key;
use clt_lab::stats::{correlation, mean, std_err};
use clt_lab::transport::{selftest, PointCloud};
use clt_lab::ustat::{
    binomial, projection_variance, projection_variance_gaussian, q_nr, u_statistic, u_statistic_fast,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{
    BlocksSection, DependenceSection, ExperimentConfig, Kind, RateSection, Section, SelftestSection, SlopeWindow,
    SplitChainSection, UstatSection,
};
use crate::error::{CliError, CliResult};

/// Enumeration cross-check of the closed-form U-statistic below this many subsets.
const ENUMERATION_CHECK: u128 = 2_000_000;
const GAUSS_HERMITE_NODES: usize = 40;

/// Headline numbers of a rate experiment, read back by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub setting: Option<Setting>,
    pub p: f64,
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub theoretical_exponent: Option<f64>,
    pub window: Option<SlopeWindow>,
}

/// Contents of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub experiment: Kind,
    pub name: String,
    pub seed: u64,
    /// `None` when the experiment carries no pass/fail criterion.
    pub passed: Option<bool>,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateSummary>,
    pub result: Value,
}

/// Rows of `results.csv`; the header is fixed per experiment kind.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

pub struct Outcome {
    pub results: ResultsFile,
    pub csv: CsvTable,
}

pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

struct Partial {
    passed: Option<bool>,
    summary: String,
    rate: Option<RateSummary>,
    result: Value,
    csv: CsvTable,
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let started = Instant::now();
    let p = match &cfg.section {
        Section::Rate(r) => rate(r, cfg.seed)?,
        Section::SplitChain(s) => split_chain(s, cfg.seed)?,
        Section::TransportSelftest(s) => transport_selftest(s, cfg.seed)?,
        Section::Ustat(u) => ustat(u, cfg.seed)?,
        Section::Blocks(b) => blocks(b, cfg.seed)?,
        Section::DependenceFunctional(d) => dependence(d, cfg.seed, cfg.budget_secs, started)?,
    };
    Ok(Outcome {
        results: ResultsFile {
            experiment: cfg.kind,
            name: cfg.name.clone(),
            seed: cfg.seed,
            passed: p.passed,
            summary: p.summary,
            rate: p.rate,
            result: p.result,
        },
        csv: p.csv,
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

fn rate(r: &RateSection, seed: u64) -> CliResult<Partial> {
    let curve = clt_distance_curve(&r.curve_config(seed))?;
    let window = r
        .acceptance
        .or_else(|| r.setting.zip(curve.theoretical_exponent).map(|(s, a)| SlopeWindow::default_for(&s, a)));
    let passed = window.map(|w| w.contains(curve.slope));
    let csv = CsvTable {
        header: vec!["n", "log_n", "estimate", "log_estimate", "stderr", "flagged", "marginal_lower"],
        rows: curve
            .points
            .iter()
            .map(|pt| {
                vec![
                    pt.n.to_string(),
                    num((pt.n as f64).ln()),
                    num(pt.estimate),
                    num(pt.estimate.ln()),
                    num(pt.stderr),
                    pt.flagged.to_string(),
                    pt.marginal_lower.map(num).unwrap_or_default(),
                ]
            })
            .collect(),
    };
    let summary = format!(
        "slope {:.3} [{:.3}, {:.3}], R² {:.3}{}",
        curve.slope,
        curve.slope_ci.0,
        curve.slope_ci.1,
        curve.r_squared,
        curve.theoretical_exponent.map(|a| format!(", theory {a:.3}")).unwrap_or_default()
    );
    let rate = RateSummary {
        setting: curve.setting,
        p: curve.p,
        slope: curve.slope,
        slope_ci: curve.slope_ci,
        theoretical_exponent: curve.theoretical_exponent,
        window,
    };
    Ok(Partial { passed, summary, rate: Some(rate), result: to_value(&curve), csv })
}

#[derive(Serialize)]
struct IncrementSummary {
    n: usize,
    cycles: usize,
    mean: f64,
    stderr: f64,
    lag2_correlation: f64,
    max_identity_error: f64,
    max_cycle_sum_error: f64,
}

fn split_chain(s: &SplitChainSection, seed: u64) -> CliResult<Partial> {
    let chain = &s.chain;
    let small = s.small_set.clone().unwrap_or_else(|| chain.small_set().to_vec());
    let minor = build_minorization(chain, &small, s.skeleton)?;
    let init = match &s.init {
        Some(i) => i.clone(),
        None => stationary_dist(chain)?,
    };
    let traces = simulate_traces(chain, &minor, s.length, &init, seed, s.traces)?;
    let tail = fit_geometric_tail(&pooled_skeleton_lengths(&traces, false))?;
    let tail_with_first = fit_geometric_tail(&pooled_skeleton_lengths(&traces, true))?;
    let (mean_cycle, mean_cycle_stderr) = pooled_mean_cycle(&traces)?;
    let kn = if s.kn_grid.is_empty() { Vec::new() } else { kn_concentration(&traces, &s.kn_grid, s.p)? };

    let increments = match s.increments_n {
        None => None,
        Some(n) => {
            let homogeneous;
            let scheduled;
            let potential = if chain.schedule().is_some() {
                scheduled = poisson_solve_schedule(chain, s.length)?;
                Potential::Schedule(&scheduled)
            } else {
                homogeneous = poisson_solve(chain)?;
                Potential::Homogeneous(&homogeneous)
            };
            let (mut values, mut lag_a, mut lag_b) = (Vec::new(), Vec::new(), Vec::new());
            let (mut identity, mut cycle_sum): (f64, f64) = (0.0, 0.0);
            for t in &traces {
                let inc = cycle_increments(chain, t, potential, n, mean_cycle)?;
                identity = identity.max(inc.identity_error);
                cycle_sum = cycle_sum.max(inc.cycle_sum_error);
                let first: Vec<f64> = inc.tilde_m.iter().skip(1).map(|v| v[0]).collect();
                for w in first.windows(3) {
                    lag_a.push(w[0]);
                    lag_b.push(w[2]);
                }
                values.extend(first);
            }
            Some(IncrementSummary {
                n,
                cycles: values.len(),
                mean: mean(&values),
                stderr: std_err(&values),
                lag2_correlation: correlation(&lag_a, &lag_b),
                max_identity_error: identity,
                max_cycle_sum_error: cycle_sum,
            })
        }
    };

    let tail_ok = !tail.degenerate && tail.r_squared >= 0.95 && tail.rho_hat < 1.0;
    let identity_ok = increments.as_ref().is_none_or(|i| i.max_identity_error <= 1e-9);
    let summary = format!(
        "{} cycles, rho_hat {:.4}, R² {:.4}, mean cycle {:.3}",
        tail.n_cycles, tail.rho_hat, tail.r_squared, mean_cycle
    );
    let csv = CsvTable {
        header: vec!["ell", "survival", "log_survival"],
        rows: tail.survival.iter().map(|&(l, p)| vec![l.to_string(), num(p), num(p.ln())]).collect(),
    };
    let result = json!({
        "minorization": minor,
        "tail_fit": tail,
        "tail_fit_with_first": tail_with_first,
        "mean_cycle": mean_cycle,
        "mean_cycle_stderr": mean_cycle_stderr,
        "kn": kn,
        "increments": increments,
    });
    Ok(Partial { passed: Some(tail_ok && identity_ok), summary, rate: None, result, csv })
}

fn transport_selftest(s: &SelftestSection, seed: u64) -> CliResult<Partial> {
    let report = selftest(s.instances, seed)?;
    let csv = CsvTable {
        header: vec!["instances", "exact", "max_abs_diff"],
        rows: vec![vec![report.instances.to_string(), report.exact.to_string(), num(report.max_abs_diff)]],
    };
    Ok(Partial { passed: Some(report.passed()), summary: report.summary(), rate: None, result: to_value(&report), csv })
}

fn ustat(u: &UstatSection, seed: u64) -> CliResult<Partial> {
    let kernel = u.kernel.build(u.input_dim)?;
    let sample = gen_iid(u.n, u.input_dim, u.profile, seed)?;
    let data = PointCloud::new(sample.data, u.input_dim)?;
    let value = u_statistic_fast(&data, &kernel)?;
    let enumeration_gap = if binomial(u.n, kernel.order) <= ENUMERATION_CHECK {
        let slow = u_statistic(&data, &kernel)?;
        Some(value.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    } else {
        None
    };
    let projection = match (u.projection_reps, u.projection_inner) {
        (Some(reps), Some(inner)) => {
            to_value(&projection_variance(&kernel, &u.profile, reps, inner, derive_key(seed, &[1]))?)
        }
        _ if u.input_dim == 1 && u.profile == clt_lab::generators::MomentProfile::Gaussian => {
            to_value(&projection_variance_gaussian(&kernel, GAUSS_HERMITE_NODES)?)
        }
        _ => Value::Null,
    };
    let r = kernel.order;
    let limit = (r * r) as f64;
    let q: Vec<(usize, f64)> = u.q_grid.iter().map(|&n| Ok((n, q_nr(n, r)?))).collect::<CliResult<_>>()?;
    let csv = CsvTable {
        header: vec!["n", "log_n", "q_nr", "log_gap"],
        rows: q
            .iter()
            .map(|&(n, v)| vec![n.to_string(), num((n as f64).ln()), num(v), num((limit - v).ln())])
            .collect(),
    };
    let scale = 1.0 + value.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let passed = enumeration_gap.map(|g| g <= 1e-9 * scale);
    let summary = format!(
        "{} of order {r} on n = {}: {:?}{}",
        kernel.name,
        u.n,
        value,
        enumeration_gap.map(|g| format!(", enumeration gap {g:.1e}")).unwrap_or_default()
    );
    let result = json!({
        "kernel": kernel.name,
        "order": r,
        "n": u.n,
        "value": value,
        "enumeration_gap": enumeration_gap,
        "projection_variance": projection,
        "q_nr": q.iter().map(|&(n, v)| json!({ "n": n, "q_nr": v })).collect::<Vec<_>>(),
    });
    Ok(Partial { passed, summary, rate: None, result, csv })
}

fn blocks(b: &BlocksSection, seed: u64) -> CliResult<Partial> {
    let length = match b.ell {
        Some(ell) => clt_lab::blocks::BlockLength { ell, warning: None },
        None => optimal_block_length(b.n, b.m_dep, b.p, b.q)?,
    };
    let part = block_partition(b.n, b.m_dep, length.ell)?;
    let sample = if b.m_dep == 0 {
        gen_iid(b.n, b.d, b.profile, seed)?
    } else {
        gen_m_dependent(b.n, b.d, b.m_dep, b.profile, seed)?
    };
    let sums = block_sums(&sample, &part)?;
    let scale = 1.0 + sample.data.iter().fold(0.0f64, |a, v| a + v.abs());
    let passed = sums.identity_error <= 1e-12 * scale;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut rows = Vec::new();
    for (i, (r, s)) in part.big.iter().zip(&sums.big_sums).enumerate() {
        rows.push(vec![i.to_string(), "big".into(), r.start.to_string(), r.end.to_string(), num(norm(s))]);
    }
    for (i, r) in part.small.iter().enumerate() {
        let s: Vec<f64> = (0..sample.d).map(|c| r.clone().map(|t| sample.row(t)[c]).sum()).collect();
        rows.push(vec![i.to_string(), "small".into(), r.start.to_string(), r.end.to_string(), num(norm(&s))]);
    }
    rows.push(vec![
        "0".into(),
        "remainder".into(),
        part.remainder.start.to_string(),
        part.remainder.end.to_string(),
        num(norm(&sums.remainder_sum)),
    ]);
    let summary = format!("ell {} gives {} big blocks, identity error {:.1e}", length.ell, part.k, sums.identity_error);
    let result = json!({ "block_length": length, "partition": part, "sums": sums });
    Ok(Partial {
        passed: Some(passed),
        summary,
        rate: None,
        result,
        csv: CsvTable { header: vec!["block", "kind", "start", "end", "sum_norm"], rows },
    })
}

fn dependence(d: &DependenceSection, seed: u64, budget: Option<f64>, started: Instant) -> CliResult<Partial> {
    let mut values: Vec<DependenceFunctional> = Vec::new();
    for &n in &d.n_grid {
        let remaining = budget.map(|b| b - started.elapsed().as_secs_f64());
        if remaining.is_some_and(|r| r <= 0.0) {
            return Err(CliError::BudgetExceeded(budget.unwrap_or_default()));
        }
        let v = match (&d.source, d.exact) {
            (DependenceSource::Chain { chain }, true) => dependence_functional_exact(chain, n)?,
            (source, _) => estimate_dependence_functional(
                source,
                n,
                d.outer_reps,
                d.inner_m,
                d.debias,
                derive_key(seed, &[n as u64]),
                remaining,
            )?,
        };
        values.push(v);
    }
    let w1: Option<Vec<f64>> = match &d.source {
        DependenceSource::Chain { chain } => {
            Some(d.n_grid.iter().map(|&n| exact_chain_w1(chain, n)).collect::<Result<_, _>>()?)
        }
        DependenceSource::Iid { .. } => None,
    };
    let constant = w1
        .as_ref()
        .map(|w| w.iter().zip(&values).filter(|(_, f)| f.value > 0.0).map(|(w, f)| w / f.value).fold(0.0, f64::max));
    let decreasing = values.windows(2).all(|w| {
        let slack = 2.0 * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
        w[1].value < w[0].value + slack
    });
    let csv = CsvTable {
        header: vec!["n", "log_n", "estimate", "log_estimate", "stderr", "w1"],
        rows: values
            .iter()
            .enumerate()
            .map(|(i, f)| {
                vec![
                    f.n.to_string(),
                    num((f.n as f64).ln()),
                    num(f.value),
                    num(f.value.ln()),
                    num(f.stderr),
                    w1.as_ref().map(|w| num(w[i])).unwrap_or_default(),
                ]
            })
            .collect(),
    };
    let summary = format!(
        "{} sizes, {}{}",
        values.len(),
        if decreasing { "decreasing" } else { "not decreasing" },
        constant.map(|c| format!(", dominating constant {c:.4}")).unwrap_or_default()
    );
    let result = json!({ "values": values, "exact_w1": w1, "constant": constant, "decreasing": decreasing });
    Ok(Partial { passed: Some(decreasing), summary, rate: None, result, csv })
}
