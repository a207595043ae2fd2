//! The experiment pipeline: assumptions, fixed points, ODE limits, TD runs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use tdlab_core::ode::{self, SpectrumEntry};
use tdlab_core::sa_checks::{self, AssumptionReport};
use tdlab_core::td::{self, TdConfig};
use tdlab_core::{fixed_points, Instance, LearningRateSchedule, TdTrace};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// Env var capping the TD worker count.
pub const THREADS_ENV: &str = "TDLAB_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointSummary {
    pub n_states: usize,
    pub dim: usize,
    pub rank_x: usize,
    pub null_dim: usize,
    pub stationary: Vec<f64>,
    pub v_star: Vec<f64>,
    pub w_particular: Vec<f64>,
    pub w_particular_norm: f64,
    /// Columns of the orthonormal basis of `ker(A)`.
    pub null_basis: Vec<Vec<f64>>,
    /// `‖v_star(least norm) - v_star(ΠT iteration)‖_∞`.
    pub route_gap: f64,
    pub linear_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeLimitSummary {
    pub w0: Vec<f64>,
    pub w_inf: Vec<f64>,
    pub endpoint: Vec<f64>,
    /// `‖w(horizon) - w_∞(w0)‖`.
    pub endpoint_gap: f64,
    /// `‖X w(horizon) - v_*‖_D`.
    pub value_error: f64,
    pub dist_w: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeSummary {
    pub rank_a: usize,
    pub kernel_dim: usize,
    pub spectral_gap: Option<f64>,
    pub spectrum: Vec<SpectrumEntry>,
    pub a_inf_norm: f64,
    pub a_inf: Vec<Vec<f64>>,
    pub horizon: f64,
    pub limits: Vec<OdeLimitSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_w: Vec<f64>,
    pub value_error: f64,
    pub value_error_sup: f64,
    pub mspbe: f64,
    pub dist_w: f64,
    pub norm_w: f64,
    pub norm_gamma_proj: f64,
    pub max_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability_ratio: Option<f64>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TdSummary {
    pub n_steps: usize,
    pub schedule: LearningRateSchedule,
    pub checkpoint_every: usize,
    pub seeds: Vec<SeedSummary>,
    pub median_value_error: f64,
    pub median_value_error_sup: f64,
    pub median_dist_w: f64,
    pub max_norm: f64,
    /// RMS spread of the final iterates' nearest points in `W_*`.
    pub final_dispersion: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_stability_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub status: &'static str,
    pub assumptions: AssumptionReport,
    pub fixed_points: FixedPointSummary,
    pub ode: OdeSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub td: Option<TdSummary>,
    pub assertions: Vec<Assertion>,
    pub files: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }
}

/// A sampled ODE solution with per-sample diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrace {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub value_error: Vec<f64>,
    pub dist_w: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: RunReport,
    pub traces: Vec<TdTrace>,
    pub ode_traces: Vec<OdeTrace>,
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

pub fn ode_file_name(index: usize) -> String {
    format!("ode_trajectory_{index}.csv")
}

pub const REPORT_FILE: &str = "report.json";

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

struct Assertions(Vec<Assertion>);

impl Assertions {
    fn check(&mut self, name: impl Into<String>, pass: bool, detail: String) {
        self.0.push(Assertion {
            name: name.into(),
            pass,
            detail,
        });
    }
}

pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    Ok(Instance::new(cfg.mdp.clone(), cfg.policy.clone(), cfg.features.clone())?)
}

pub fn fixed_point_summary(inst: &Instance) -> Result<FixedPointSummary> {
    let fps = &inst.fixed_points;
    let v_iter = fixed_points::projected_bellman_fixed_point(&inst.chain, &inst.projector)?;
    Ok(FixedPointSummary {
        n_states: inst.chain.n_states(),
        dim: inst.dim(),
        rank_x: inst.features.rank(),
        null_dim: fps.null_dim(),
        stationary: to_vec(inst.chain.stationary()),
        v_star: to_vec(&fps.v_star),
        w_particular: to_vec(&fps.w_particular),
        w_particular_norm: fps.w_particular.norm(),
        null_basis: columns(&fps.null_basis),
        route_gap: (&fps.v_star - v_iter).amax(),
        linear_residual: inst.system.mean_field(&fps.w_particular).norm(),
    })
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(text) => match text.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(HarnessError::validation(
                THREADS_ENV,
                format!("must be a positive integer, got `{text}`"),
            )),
        },
    }
}

fn run_ode(
    cfg: &ExperimentConfig,
    inst: &Instance,
    checks: &mut Assertions,
) -> Result<(OdeSummary, Vec<OdeTrace>)> {
    let sys = &inst.system;
    let fps = &inst.fixed_points;
    let lim = ode::limit_projector(sys)?;
    let a_inf = &lim.a_inf;
    let idem = (a_inf * a_inf - a_inf).amax();
    let annihilate = (&sys.a * a_inf).amax().max((a_inf * &sys.a).amax());
    checks.check(
        "a_inf_projector",
        idem <= 1e-9 && annihilate <= 1e-9,
        format!("|A_inf^2 - A_inf| = {idem:.3e}, |A A_inf|, |A_inf A| <= {annihilate:.3e}"),
    );

    let default_horizon = lim.spectral_gap.map_or(1.0, |g| 200.0 / g);
    let horizon = cfg.file.ode_horizon.unwrap_or(default_horizon);
    let samples = cfg.file.ode_samples;
    let times: Vec<f64> = (0..samples)
        .map(|i| horizon * i as f64 / (samples - 1) as f64)
        .collect();

    let mut limits = Vec::new();
    let mut traces = Vec::new();
    for (i, w0) in cfg.ode_initial_conditions.iter().enumerate() {
        let traj = ode::closed_form_trajectory(sys, fps, w0, &times);
        let w_inf = ode::w_infinity(&lim, fps, w0);
        let endpoint = traj.endpoint().clone();
        let endpoint_gap = (&endpoint - &w_inf).norm();
        let value_error = inst.value_error(&endpoint);
        if cfg.file.ode_horizon.is_none() {
            checks.check(
                format!("ode_limit[{i}]"),
                endpoint_gap <= 1e-8 && value_error <= 1e-8,
                format!(
                    "at t = {horizon:.6e}: |w(t) - w_inf| = {endpoint_gap:.3e}, |Xw(t) - v_*|_D = {value_error:.3e}"
                ),
            );
        }
        limits.push(OdeLimitSummary {
            w0: to_vec(w0),
            w_inf: to_vec(&w_inf),
            dist_w: fps.distance(&endpoint),
            endpoint: to_vec(&endpoint),
            endpoint_gap,
            value_error,
            file: ode_file_name(i),
        });
        traces.push(OdeTrace {
            value_error: traj.states.iter().map(|w| inst.value_error(w)).collect(),
            dist_w: traj.states.iter().map(|w| fps.distance(w)).collect(),
            times: traj.times,
            states: traj.states,
        });
    }
    let summary = OdeSummary {
        rank_a: lim.rank_a,
        kernel_dim: lim.kernel_dim(),
        spectral_gap: lim.spectral_gap,
        a_inf_norm: a_inf.norm(),
        a_inf: rows(a_inf),
        spectrum: lim.spectrum,
        horizon,
        limits,
    };
    Ok((summary, traces))
}

fn run_td_seeds(
    cfg: &ExperimentConfig,
    inst: &Instance,
    checks: &mut Assertions,
) -> Result<(TdSummary, Vec<TdTrace>)> {
    let file = &cfg.file;
    let stability = file.stability;
    let run_one = |seed: u64| -> Result<(SeedSummary, TdTrace)> {
        let mut tc = TdConfig::new(file.schedule, file.n_steps, seed, inst.dim());
        tc.w_init = cfg.w_init.clone();
        tc.checkpoint_every = file.checkpoint_every;
        tc.record_distance = stability.is_some();
        let mut trace = td::run_td(inst, &tc)?;
        let stability_ratio = match &stability {
            Some(st) => td::local_stability_report(
                &trace.distance_series,
                &file.schedule,
                st.budget,
                st.segments,
            )?
            .decrease_ratio(),
            None => None,
        };
        trace.distance_series = Vec::new();
        let last = trace.final_checkpoint();
        let summary = SeedSummary {
            seed,
            final_w: to_vec(&trace.final_w),
            value_error: last.value_error,
            value_error_sup: inst.value_error_sup(&trace.final_w),
            mspbe: last.mspbe,
            dist_w: last.dist_to_fixed_set,
            norm_w: last.norm_w,
            norm_gamma_proj: last.norm_gamma_proj,
            max_norm: trace.max_norm,
            stability_ratio,
            file: trace_file_name(seed),
        };
        Ok((summary, trace))
    };

    let results: Vec<Result<(SeedSummary, TdTrace)>> = match thread_count()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::validation(THREADS_ENV, e.to_string()))?
            .install(|| file.seeds.par_iter().map(|&s| run_one(s)).collect()),
        None => file.seeds.par_iter().map(|&s| run_one(s)).collect(),
    };
    let (seeds, traces): (Vec<SeedSummary>, Vec<TdTrace>) =
        results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();

    let fps = &inst.fixed_points;
    let nearest: Vec<DVector<f64>> = traces.iter().map(|t| fps.nearest(&t.final_w)).collect();
    let centre = nearest.iter().fold(DVector::zeros(inst.dim()), |acc, w| acc + w) / nearest.len() as f64;
    let final_dispersion =
        (nearest.iter().map(|w| (w - &centre).norm_squared()).sum::<f64>() / nearest.len() as f64).sqrt();

    let pick = |f: fn(&SeedSummary) -> f64| seeds.iter().map(f).collect::<Vec<_>>();
    let max_norm = pick(|s| s.max_norm).into_iter().fold(0.0, f64::max);
    let median_value_error_sup = median(&pick(|s| s.value_error_sup));
    let median_stability_ratio = stability.map(|_| {
        median(
            &seeds
                .iter()
                .map(|s| s.stability_ratio.unwrap_or(0.0))
                .collect::<Vec<_>>(),
        )
    });

    if let Some(bound) = file.max_norm_bound {
        checks.check(
            "max_norm_bound",
            max_norm <= bound,
            format!("max over seeds and steps of |w_t| = {max_norm:.6e}, bound {bound:.6e}"),
        );
    }
    if let Some(threshold) = file.value_error_threshold {
        checks.check(
            "value_error_threshold",
            median_value_error_sup <= threshold,
            format!(
                "median final |Xw - v_*|_inf = {median_value_error_sup:.6e}, threshold {threshold:.6e}"
            ),
        );
    }
    if let (Some(st), Some(ratio)) = (stability, median_stability_ratio) {
        checks.check(
            "local_stability",
            ratio >= st.min_ratio,
            format!(
                "median first/last quartile window-max ratio = {ratio:.6e} (T = {}, {} segments), required {}",
                st.budget, st.segments, st.min_ratio
            ),
        );
    }

    let summary = TdSummary {
        n_steps: file.n_steps,
        schedule: file.schedule,
        checkpoint_every: file.checkpoint_every,
        median_value_error: median(&pick(|s| s.value_error)),
        median_value_error_sup,
        median_dist_w: median(&pick(|s| s.dist_w)),
        max_norm,
        final_dispersion,
        median_stability_ratio,
        seeds,
    };
    Ok((summary, traces))
}

/// Runs the full pipeline. Numerical assertions are recorded in the report;
/// bad input and violated assumptions are errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let assumptions =
        sa_checks::check_assumptions(&cfg.mdp, &cfg.policy, &cfg.features, &cfg.file.schedule);
    if !assumptions.all_pass() {
        return Err(HarnessError::Assumptions(assumptions));
    }
    let inst = build_instance(cfg)?;
    let mut checks = Assertions(Vec::new());

    let fixed_points = fixed_point_summary(&inst)?;
    let v_scale = 1.0 + inst.fixed_points.v_star.amax();
    checks.check(
        "v_star_routes_agree",
        fixed_points.route_gap <= 1e-9 * v_scale,
        format!("least-norm vs contraction iteration gap {:.3e}", fixed_points.route_gap),
    );
    let b_scale = 1.0 + inst.system.b.norm();
    checks.check(
        "w_particular_solves",
        fixed_points.linear_residual <= 1e-8 * b_scale,
        format!("|A w_p + b| = {:.3e}", fixed_points.linear_residual),
    );

    let (ode, ode_traces) = run_ode(cfg, &inst, &mut checks)?;
    let (td, traces) = if cfg.td_requested() {
        let (summary, traces) = run_td_seeds(cfg, &inst, &mut checks)?;
        (Some(summary), traces)
    } else {
        (None, Vec::new())
    };

    let mut files = vec![REPORT_FILE.to_string()];
    files.extend(traces.iter().map(|t| trace_file_name(t.seed)));
    files.extend((0..ode_traces.len()).map(ode_file_name));

    let mut report = RunReport {
        status: "pass",
        assumptions,
        fixed_points,
        ode,
        td,
        assertions: checks.0,
        files,
    };
    if !report.passed() {
        report.status = "fail";
    }
    Ok(ExperimentOutput {
        report,
        traces,
        ode_traces,
    })
}
