//! JSON experiment configs.
//!
//! MDPs, policies and features are given either inline or as generator
//! expressions such as `random_walk(5)` or `duplicate_columns(tabular, 1)`.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use tdlab_core::generators;
use tdlab_core::{FeatureMap, LearningRateSchedule, Mdp, Policy};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MdpSpec {
    Named(String),
    Table {
        /// One `|S|×|S|` matrix per action.
        transitions: Vec<Vec<Vec<f64>>>,
        /// `|S|×|A|`.
        rewards: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySpec {
    Named(String),
    Table(Vec<Vec<f64>>),
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self::Named("uniform".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureSpec {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySpec {
    /// Learning-rate budget `T` of each window.
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default = "default_segments")]
    pub segments: usize,
    /// Required ratio of early to late window maxima (median over seeds).
    #[serde(default = "default_min_ratio")]
    pub min_ratio: f64,
}

fn default_budget() -> f64 {
    1.0
}

fn default_segments() -> usize {
    16
}

fn default_min_ratio() -> f64 {
    2.0
}

fn default_checkpoint_every() -> usize {
    1000
}

fn default_reward_scale() -> f64 {
    1.0
}

fn default_ode_samples() -> usize {
    201
}

/// The config file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mdp: MdpSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    pub features: FeatureSpec,
    pub gamma: f64,
    #[serde(default = "default_reward_scale")]
    pub reward_scale: f64,
    #[serde(default)]
    pub schedule: LearningRateSchedule,
    /// Zero disables the TD experiment.
    #[serde(default)]
    pub n_steps: usize,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub w_init: Option<Vec<f64>>,
    #[serde(default)]
    pub ode_initial_conditions: Vec<Vec<f64>>,
    /// Defaults to `200 / spectral gap`.
    #[serde(default)]
    pub ode_horizon: Option<f64>,
    #[serde(default = "default_ode_samples")]
    pub ode_samples: usize,
    /// Asserts the median over seeds of the final `‖Xw - v_*‖_∞`.
    #[serde(default)]
    pub value_error_threshold: Option<f64>,
    /// Asserts `max_t ‖w_t‖` for every seed.
    #[serde(default)]
    pub max_norm_bound: Option<f64>,
    #[serde(default)]
    pub stability: Option<StabilitySpec>,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

/// A validated config with every object built.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub file: ConfigFile,
    pub mdp: Mdp,
    pub policy: Policy,
    pub features: FeatureMap,
    pub w_init: DVector<f64>,
    pub ode_initial_conditions: Vec<DVector<f64>>,
}

impl ExperimentConfig {
    pub fn td_requested(&self) -> bool {
        self.file.n_steps > 0
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    load_config_file(path)?.validate()
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        context: "reading config",
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text).map_err(|e| match e {
        HarnessError::Parse { message, .. } => HarnessError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn parse_config_str(text: &str) -> Result<ConfigFile> {
    serde_json::from_str(text).map_err(|e| {
        if e.is_data() {
            HarnessError::validation("config", e.to_string())
        } else {
            HarnessError::Parse {
                path: PathBuf::from("<string>"),
                message: e.to_string(),
            }
        }
    })
}

fn check_finite(field: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::validation(field, format!("must be finite, got {value}")))
    }
}

fn check_positive(field: &str, value: Option<f64>) -> Result<()> {
    match value {
        Some(v) if !(v > 0.0 && v.is_finite()) => {
            Err(HarnessError::validation(field, format!("must be positive and finite, got {v}")))
        }
        _ => Ok(()),
    }
}

fn table_matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(HarnessError::validation(field, "table must be non-empty"));
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
        return Err(HarnessError::validation(
            field,
            format!("row {i} has {} entries, expected {m}", row.len()),
        ));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn weight_vector(field: &str, values: &[f64], dim: usize) -> Result<DVector<f64>> {
    if values.len() != dim {
        return Err(HarnessError::validation(
            field,
            format!("has {} entries, features have dimension {dim}", values.len()),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(HarnessError::validation(field, "entries must be finite"));
    }
    Ok(DVector::from_row_slice(values))
}

impl ConfigFile {
    pub fn validate(self) -> Result<ExperimentConfig> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(HarnessError::validation(
                "gamma",
                format!("must lie in [0, 1), got {}", self.gamma),
            ));
        }
        check_finite("reward_scale", self.reward_scale)?;
        let sched = &self.schedule;
        check_positive("schedule.alpha0", Some(sched.alpha0))?;
        check_finite("schedule.p", sched.p)?;
        if self.n_steps > 0 && self.seeds.is_empty() {
            return Err(HarnessError::validation(
                "seeds",
                "must be non-empty when n_steps > 0",
            ));
        }
        if self.checkpoint_every == 0 {
            return Err(HarnessError::validation("checkpoint_every", "must be at least 1"));
        }
        if self.ode_samples < 2 {
            return Err(HarnessError::validation("ode_samples", "must be at least 2"));
        }
        check_positive("ode_horizon", self.ode_horizon)?;
        check_positive("value_error_threshold", self.value_error_threshold)?;
        check_positive("max_norm_bound", self.max_norm_bound)?;
        if let Some(st) = &self.stability {
            check_positive("stability.budget", Some(st.budget))?;
            check_positive("stability.min_ratio", Some(st.min_ratio))?;
            if st.segments < 4 {
                return Err(HarnessError::validation("stability.segments", "must be at least 4"));
            }
            if self.n_steps == 0 {
                return Err(HarnessError::validation("stability", "requires n_steps > 0"));
            }
        }

        let mdp = build_mdp(&self.mdp, self.gamma)?.with_reward_scale(self.reward_scale);
        let policy = build_policy(&self.policy, &mdp)?;
        let features = build_features(&self.features, mdp.n_states())?;
        let d = features.dim();
        let w_init = match &self.w_init {
            Some(w) => weight_vector("w_init", w, d)?,
            None => DVector::zeros(d),
        };
        let ode_initial_conditions = self
            .ode_initial_conditions
            .iter()
            .enumerate()
            .map(|(i, w)| weight_vector(&format!("ode_initial_conditions[{i}]"), w, d))
            .collect::<Result<_>>()?;
        Ok(ExperimentConfig {
            file: self,
            mdp,
            policy,
            features,
            w_init,
            ode_initial_conditions,
        })
    }
}

/// Parsed generator expression: a name with optional arguments.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Call(String, Vec<Expr>),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &'a str {
        let start = self.pos;
        while self.src[self.pos..].starts_with(&f) {
            self.pos += 1;
        }
        &self.src[start..self.pos]
    }

    fn expr(&mut self) -> std::result::Result<Expr, String> {
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                let name = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
                let mut args = Vec::new();
                if self.eat('(') {
                    if !self.eat(')') {
                        loop {
                            args.push(self.expr()?);
                            if self.eat(')') {
                                break;
                            }
                            if !self.eat(',') {
                                return Err(format!("expected `,` or `)` at offset {}", self.pos));
                            }
                        }
                    }
                }
                Ok(Expr::Call(name.to_string(), args))
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '.' => {
                let text = self.take_while(|c| c.is_ascii_digit() || "+-.eE".contains(c));
                text.parse()
                    .map(Expr::Number)
                    .map_err(|_| format!("bad number `{text}`"))
            }
            Some(c) => Err(format!("unexpected `{c}` at offset {}", self.pos)),
            None => Err("unexpected end of expression".into()),
        }
    }
}

pub fn parse_expr(src: &str) -> std::result::Result<Expr, String> {
    let mut p = Parser { src, pos: 0 };
    let e = p.expr()?;
    if p.peek().is_some() {
        return Err(format!("trailing input at offset {}", p.pos));
    }
    Ok(e)
}

fn int_arg(field: &str, call: &str, e: &Expr) -> Result<usize> {
    match e {
        Expr::Number(x) if *x >= 0.0 && x.fract() == 0.0 && *x < 1e15 => Ok(*x as usize),
        _ => Err(HarnessError::validation(
            field,
            format!("`{call}` expects non-negative integer arguments"),
        )),
    }
}

fn call_args<'e>(
    field: &str,
    name: &str,
    args: &'e [Expr],
    arity: usize,
) -> Result<&'e [Expr]> {
    if args.len() == arity {
        Ok(args)
    } else {
        Err(HarnessError::validation(
            field,
            format!("`{name}` takes {arity} argument(s), got {}", args.len()),
        ))
    }
}

fn core_err(field: &str) -> impl Fn(tdlab_core::Error) -> HarnessError + '_ {
    move |e| HarnessError::validation(field, e.to_string())
}

fn parse_named(field: &str, text: &str) -> Result<(String, Vec<Expr>)> {
    match parse_expr(text).map_err(|m| HarnessError::validation(field, m))? {
        Expr::Call(name, args) => Ok((name, args)),
        Expr::Number(_) => Err(HarnessError::validation(field, "expected a generator name")),
    }
}

pub fn build_mdp(spec: &MdpSpec, gamma: f64) -> Result<Mdp> {
    const F: &str = "mdp";
    match spec {
        MdpSpec::Named(text) => {
            let (name, args) = parse_named(F, text)?;
            match name.as_str() {
                "cycle" => {
                    let a = call_args(F, &name, &args, 1)?;
                    generators::cycle(int_arg(F, &name, &a[0])?, gamma).map_err(core_err(F))
                }
                "random_walk" => {
                    let a = call_args(F, &name, &args, 1)?;
                    generators::random_walk(int_arg(F, &name, &a[0])?, gamma).map_err(core_err(F))
                }
                "random_mdp" => {
                    let a = call_args(F, &name, &args, 3)?;
                    generators::random_mdp(
                        int_arg(F, &name, &a[0])?,
                        int_arg(F, &name, &a[1])?,
                        int_arg(F, &name, &a[2])? as u64,
                        gamma,
                    )
                    .map_err(core_err(F))
                }
                other => Err(HarnessError::validation(
                    F,
                    format!("unknown MDP generator `{other}` (cycle, random_walk, random_mdp)"),
                )),
            }
        }
        MdpSpec::Table {
            transitions,
            rewards,
        } => {
            let p = transitions
                .iter()
                .enumerate()
                .map(|(a, t)| table_matrix(&format!("mdp.transitions[{a}]"), t))
                .collect::<Result<Vec<_>>>()?;
            let r = table_matrix("mdp.rewards", rewards)?;
            Mdp::new(p, r, gamma).map_err(core_err(F))
        }
    }
}

pub fn build_policy(spec: &PolicySpec, mdp: &Mdp) -> Result<Policy> {
    const F: &str = "policy";
    let (n, a) = (mdp.n_states(), mdp.n_actions());
    match spec {
        PolicySpec::Named(text) => {
            let (name, args) = parse_named(F, text)?;
            match name.as_str() {
                "uniform" => {
                    call_args(F, &name, &args, 0)?;
                    Ok(Policy::uniform(n, a))
                }
                "random" => {
                    let args = call_args(F, &name, &args, 1)?;
                    generators::random_policy(n, a, int_arg(F, &name, &args[0])? as u64)
                        .map_err(core_err(F))
                }
                other => Err(HarnessError::validation(
                    F,
                    format!("unknown policy `{other}` (uniform, random)"),
                )),
            }
        }
        PolicySpec::Table(rows) => {
            let probs = table_matrix(F, rows)?;
            if probs.shape() != (n, a) {
                return Err(HarnessError::validation(
                    F,
                    format!("table is {}×{}, MDP needs {n}×{a}", probs.nrows(), probs.ncols()),
                ));
            }
            Policy::new(probs).map_err(core_err(F))
        }
    }
}

fn eval_features(e: &Expr, n_states: usize) -> Result<DMatrix<f64>> {
    const F: &str = "features";
    let Expr::Call(name, args) = e else {
        return Err(HarnessError::validation(F, "expected a feature generator"));
    };
    match name.as_str() {
        "tabular" => {
            call_args(F, name, args, 0)?;
            Ok(generators::tabular(n_states))
        }
        "duplicate_columns" => {
            let a = call_args(F, name, args, 2)?;
            Ok(generators::duplicate_columns(
                &eval_features(&a[0], n_states)?,
                int_arg(F, name, &a[1])?,
            ))
        }
        "zero_pad" => {
            let a = call_args(F, name, args, 2)?;
            Ok(generators::zero_pad(&eval_features(&a[0], n_states)?, int_arg(F, name, &a[1])?))
        }
        "random_rank" => {
            let a = call_args(F, name, args, 3)?;
            let r = int_arg(F, name, &a[0])?;
            let d = int_arg(F, name, &a[1])?;
            if d == 0 {
                return Err(HarnessError::validation(F, "`random_rank` needs d ≥ 1"));
            }
            Ok(generators::random_rank(n_states, r, d, int_arg(F, name, &a[2])? as u64))
        }
        other => Err(HarnessError::validation(
            F,
            format!("unknown feature generator `{other}` (tabular, duplicate_columns, zero_pad, random_rank)"),
        )),
    }
}

pub fn build_features(spec: &FeatureSpec, n_states: usize) -> Result<FeatureMap> {
    let x = match spec {
        FeatureSpec::Named(text) => {
            let e = parse_expr(text).map_err(|m| HarnessError::validation("features", m))?;
            eval_features(&e, n_states)?
        }
        FeatureSpec::Matrix(rows) => table_matrix("features", rows)?,
    };
    if x.nrows() != n_states {
        return Err(HarnessError::validation(
            "features",
            format!("{} rows for {n_states} states", x.nrows()),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(HarnessError::validation("features", "entries must be finite"));
    }
    Ok(FeatureMap::new(x))
}
