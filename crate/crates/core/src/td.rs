//! The stochastic linear TD(0) learner.
//!
//! Runs are driven by [`ChaCha8Rng`] seeded with `seed_from_u64`, and
//! categorical draws use inverse-CDF sampling on a single uniform, so a
//! `(config, seed)` pair reproduces the same trace on every platform.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::linalg::FeatureMap;
use crate::markov::{Mdp, Policy};
use crate::sa_checks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Power,
}

/// `α_t = alpha0 / (t + 1)^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRateSchedule {
    #[serde(default)]
    pub kind: ScheduleKind,
    pub alpha0: f64,
    pub p: f64,
}

impl Default for LearningRateSchedule {
    fn default() -> Self {
        Self::power(0.5, 0.75)
    }
}

impl LearningRateSchedule {
    pub fn power(alpha0: f64, p: f64) -> Self {
        Self {
            kind: ScheduleKind::Power,
            alpha0,
            p,
        }
    }

    pub fn alpha(&self, t: usize) -> f64 {
        match self.kind {
            ScheduleKind::Power => self.alpha0 * ((t + 1) as f64).powf(-self.p),
        }
    }

    /// Positive, decreasing, `Σα = ∞`, `Σα² < ∞` and bounded
    /// `1/α_{t+1} - 1/α_t`: holds exactly for `p ∈ (0.5, 1]`.
    pub fn satisfies_step_size_conditions(&self) -> bool {
        match self.kind {
            ScheduleKind::Power => {
                self.alpha0 > 0.0 && self.alpha0.is_finite() && self.p > 0.5 && self.p <= 1.0
            }
        }
    }
}

pub fn schedule_alpha(sched: &LearningRateSchedule, t: usize) -> f64 {
    sched.alpha(t)
}

/// `m(t, T)`: the largest `n ≥ t` with `Σ_{i=t}^{n} α_i ≤ T`.
pub fn m_horizon(sched: &LearningRateSchedule, t: usize, budget: f64) -> Result<usize> {
    let first = sched.alpha(t);
    if first > budget {
        return Err(Error::BudgetTooSmall {
            alpha: first,
            budget,
        });
    }
    let mut total = first;
    let mut n = t;
    loop {
        let next = total + sched.alpha(n + 1);
        if next > budget {
            return Ok(n);
        }
        total = next;
        n += 1;
    }
}

/// One transition `(S_t, A_t, S_{t+1})` with `R_{t+1} = r(S_t, A_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
}

fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn sample_step<R: Rng + ?Sized>(
    mdp: &Mdp,
    policy: &Policy,
    state: usize,
    rng: &mut R,
) -> Transition {
    let action = sample_categorical(rng, (0..mdp.n_actions()).map(|a| policy.prob(state, a)));
    let next_state = sample_categorical(
        rng,
        (0..mdp.n_states()).map(|s| mdp.prob(state, action, s)),
    );
    Transition {
        state,
        action,
        next_state,
        reward: mdp.reward(state, action),
    }
}

/// `w + α (r + γ x(s')^T w - x(s)^T w) x(s)`.
pub fn td_step(
    w: &DVector<f64>,
    tr: &Transition,
    alpha: f64,
    features: &FeatureMap,
    gamma: f64,
) -> DVector<f64> {
    let x = features.row(tr.state);
    let x_next = features.row(tr.next_state);
    let td_error = tr.reward + gamma * x_next.dot(w) - x.dot(w);
    w + x * (alpha * td_error)
}

/// Energy `U(w) = ‖w - w_*‖² + ‖w_*‖²`.
pub fn energy(w: &DVector<f64>, w_star: &DVector<f64>) -> f64 {
    (w - w_star).norm_squared() + w_star.norm_squared()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdConfig {
    pub schedule: LearningRateSchedule,
    pub n_steps: usize,
    pub seed: u64,
    pub w_init: DVector<f64>,
    pub checkpoint_every: usize,
    /// Record every step within the final `dense_tail` steps.
    pub dense_tail: usize,
    /// Keep `dist(w_t, W_*)` for every `t` in [`TdTrace::distance_series`].
    pub record_distance: bool,
}

impl TdConfig {
    pub fn new(schedule: LearningRateSchedule, n_steps: usize, seed: u64, dim: usize) -> Self {
        Self {
            schedule,
            n_steps,
            seed,
            w_init: DVector::zeros(dim),
            checkpoint_every: 1000,
            dense_tail: 0,
            record_distance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub w: DVector<f64>,
    /// `‖Xw - v_*‖_D`.
    pub value_error: f64,
    pub mspbe: f64,
    pub dist_to_fixed_set: f64,
    pub norm_w: f64,
    /// `‖Γw‖`.
    pub norm_gamma_proj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdTrace {
    pub seed: u64,
    pub checkpoints: Vec<Checkpoint>,
    pub final_w: DVector<f64>,
    /// `max_t ‖w_t‖` over every iterate, not only checkpoints.
    pub max_norm: f64,
    /// `dist(w_t, W_*)` for `t = 0..=n_steps`; empty unless requested.
    pub distance_series: Vec<f64>,
}

impl TdTrace {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("a trace always records the final step")
    }
}

/// Diagnostics attached to each checkpoint.
pub struct Diagnostics<'a> {
    instance: &'a Instance,
    gamma_proj: DMatrix<f64>,
}

impl<'a> Diagnostics<'a> {
    pub fn new(instance: &'a Instance) -> Self {
        Self {
            instance,
            gamma_proj: sa_checks::gamma_projector(&instance.features, instance.chain.stationary()),
        }
    }

    pub fn checkpoint(&self, step: usize, w: &DVector<f64>) -> Checkpoint {
        let inst = self.instance;
        Checkpoint {
            step,
            w: w.clone(),
            value_error: inst.value_error(w),
            mspbe: inst.mspbe(w),
            dist_to_fixed_set: inst.fixed_points.distance(w),
            norm_w: w.norm(),
            norm_gamma_proj: (&self.gamma_proj * w).norm(),
        }
    }
}

/// Runs TD(0) from `S_0 ~ μ`. Assumptions are checked first.
pub fn run_td(instance: &Instance, config: &TdConfig) -> Result<TdTrace> {
    if config.n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
    }
    if config.checkpoint_every == 0 {
        return Err(Error::InvalidParameter("checkpoint_every must be at least 1".into()));
    }
    let d = instance.dim();
    if config.w_init.len() != d {
        return Err(Error::DimensionMismatch {
            context: "initial weights",
            expected: d,
            actual: config.w_init.len(),
        });
    }
    let report = sa_checks::check_assumptions(
        &instance.mdp,
        &instance.policy,
        &instance.features,
        &config.schedule,
    );
    if !report.all_pass() {
        return Err(Error::AssumptionViolation(report.failures()));
    }

    let diagnostics = Diagnostics::new(instance);
    let gamma = instance.gamma();
    let rows: Vec<DVector<f64>> = (0..instance.features.n_states())
        .map(|s| instance.features.row(s))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = sample_categorical(&mut rng, instance.chain.stationary().iter().copied());
    let mut w = config.w_init.clone();
    let mut max_norm = w.norm();
    let dense_from = config.n_steps.saturating_sub(config.dense_tail);
    let mut checkpoints = Vec::new();
    let mut distance = config.record_distance.then(|| DistanceTracker::new(&instance.fixed_points));
    let mut distance_series = Vec::new();
    if let Some(tracker) = distance.as_mut() {
        distance_series.reserve(config.n_steps + 1);
        distance_series.push(tracker.distance(&w));
    }

    for t in 0..config.n_steps {
        if t % config.checkpoint_every == 0 || t >= dense_from {
            checkpoints.push(diagnostics.checkpoint(t, &w));
        }
        let tr = sample_step(&instance.mdp, &instance.policy, state, &mut rng);
        let x = &rows[tr.state];
        let td_error = tr.reward + gamma * rows[tr.next_state].dot(&w) - x.dot(&w);
        w.axpy(config.schedule.alpha(t) * td_error, x, 1.0);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIterate { step: t + 1 });
        }
        max_norm = max_norm.max(w.norm());
        if let Some(tracker) = distance.as_mut() {
            distance_series.push(tracker.distance(&w));
        }
        state = tr.next_state;
    }
    checkpoints.push(diagnostics.checkpoint(config.n_steps, &w));

    Ok(TdTrace {
        seed: config.seed,
        checkpoints,
        final_w: w,
        max_norm,
        distance_series,
    })
}

/// `dist(w, W_*) = ‖Q w - Q w_p‖` with `Q = I - N N^T`, without allocating per call.
struct DistanceTracker {
    q: DMatrix<f64>,
    offset: DVector<f64>,
    scratch: DVector<f64>,
}

impl DistanceTracker {
    fn new(fps: &crate::FixedPointSet) -> Self {
        let d = fps.w_particular.len();
        let n = &fps.null_basis;
        let q = DMatrix::identity(d, d) - n * n.transpose();
        let offset = &q * &fps.w_particular;
        Self {
            q,
            offset,
            scratch: DVector::zeros(d),
        }
    }

    fn distance(&mut self, w: &DVector<f64>) -> f64 {
        self.scratch.copy_from(&self.offset);
        self.scratch.gemv(1.0, &self.q, w, -1.0);
        self.scratch.norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityWindow {
    pub start: usize,
    pub end: usize,
    /// `max_{start ≤ j ≤ end} dist(w_j, W_*)` over recorded checkpoints.
    pub max_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalStabilityReport {
    pub budget: f64,
    pub windows: Vec<StabilityWindow>,
    pub non_increasing: bool,
    /// Median window maximum over the first quarter of windows.
    pub first_quartile: f64,
    /// Median window maximum over the last quarter of windows.
    pub last_quartile: f64,
}

impl LocalStabilityReport {
    /// `first_quartile / last_quartile`; `None` if both are zero.
    pub fn decrease_ratio(&self) -> Option<f64> {
        if self.last_quartile == 0.0 {
            (self.first_quartile > 0.0).then_some(f64::INFINITY)
        } else {
            Some(self.first_quartile / self.last_quartile)
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Windowed maxima of `dist(w_j, W_*)` over `[t_k, m(t_k, T)]`, from a
/// per-step series `dist[t] = dist(w_t, W_*)`.
///
/// The admissible start range (windows that close inside the series) is
/// split into `segments` blocks; in each block `t_k` is the step nearest to
/// `W_*`.
pub fn local_stability_report(
    dist: &[f64],
    sched: &LearningRateSchedule,
    budget: f64,
    segments: usize,
) -> Result<LocalStabilityReport> {
    if segments < 4 {
        return Err(Error::InvalidParameter("need at least 4 segments".into()));
    }
    // prefix[n] = Σ_{i<n} α_i
    let mut prefix = Vec::with_capacity(dist.len() + 1);
    prefix.push(0.0);
    for i in 0..dist.len() {
        prefix.push(prefix[i] + sched.alpha(i));
    }
    let window_end = |t: usize| -> Option<usize> {
        if sched.alpha(t) > budget {
            return None;
        }
        let base = prefix[t];
        // prefix[j] - base ≤ budget exactly for j < idx, so the window ends
        // at idx - 2; it is only known if it closes inside the series
        let idx = prefix.partition_point(|&p| p - base <= budget);
        (idx < prefix.len()).then(|| idx - 2)
    };

    let admissible: Vec<usize> = (0..dist.len()).filter(|&t| window_end(t).is_some()).collect();
    if admissible.len() < segments {
        return Err(Error::InvalidParameter(format!(
            "only {} admissible window starts for {segments} segments",
            admissible.len()
        )));
    }

    let mut windows = Vec::with_capacity(segments);
    for seg in 0..segments {
        let lo = seg * admissible.len() / segments;
        let hi = (seg + 1) * admissible.len() / segments;
        let &start = admissible[lo..hi]
            .iter()
            .min_by(|&&a, &&b| dist[a].total_cmp(&dist[b]))
            .expect("non-empty segment");
        let end = window_end(start).expect("admissible");
        let max_dist = dist[start..=end].iter().copied().fold(0.0, f64::max);
        windows.push(StabilityWindow {
            start,
            end,
            max_dist,
        });
    }
    let non_increasing = windows.windows(2).all(|w| w[1].max_dist <= w[0].max_dist);
    let quarter = segments / 4;
    let mut head: Vec<f64> = windows[..quarter].iter().map(|w| w.max_dist).collect();
    let mut tail: Vec<f64> = windows[segments - quarter..].iter().map(|w| w.max_dist).collect();
    Ok(LocalStabilityReport {
        budget,
        first_quartile: median(&mut head),
        last_quartile: median(&mut tail),
        windows,
        non_increasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn schedule_examples() {
        assert_eq!(LearningRateSchedule::power(1.0, 1.0).alpha(0), 1.0);
        assert!((LearningRateSchedule::power(1.0, 0.75).alpha(15) - 0.125).abs() < 1e-15);
        assert!((LearningRateSchedule::power(0.5, 1.0).alpha(9) - 0.05).abs() < 1e-15);
        let s = LearningRateSchedule::default();
        assert!((1..1000).all(|t| s.alpha(t) < s.alpha(t - 1) && s.alpha(t) > 0.0));
        assert!(s.satisfies_step_size_conditions());
        assert!(!LearningRateSchedule::power(1.0, 0.4).satisfies_step_size_conditions());
        assert!(!LearningRateSchedule::power(1.0, 0.5).satisfies_step_size_conditions());
        assert!(!LearningRateSchedule::power(0.0, 0.8).satisfies_step_size_conditions());
    }

    #[test]
    fn m_horizon_examples() {
        let harmonic = LearningRateSchedule::power(1.0, 1.0);
        assert_eq!(m_horizon(&harmonic, 0, 1.5).unwrap(), 1);
        assert_eq!(m_horizon(&harmonic, 0, 1.0).unwrap(), 0);
        assert!(matches!(
            m_horizon(&harmonic, 0, 0.5),
            Err(Error::BudgetTooSmall { .. })
        ));
        // 1/3 + 1/4 + 1/5 = 0.7833 ≤ 0.8 < + 1/6
        assert_eq!(m_horizon(&harmonic, 2, 0.8).unwrap(), 4);
    }

    #[test]
    fn td_step_examples() {
        let x = FeatureMap::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let tr = Transition {
            state: 0,
            action: 0,
            next_state: 1,
            reward: 1.0,
        };
        let w = td_step(&DVector::zeros(2), &tr, 0.5, &x, 0.9);
        assert_eq!(w, DVector::from_row_slice(&[0.5, 0.0]));

        // zero feature row leaves w unchanged
        let tr0 = Transition { state: 1, ..tr };
        let w1 = DVector::from_row_slice(&[0.3, -2.0]);
        assert_eq!(td_step(&w1, &tr0, 0.5, &x, 0.9), w1);

        // zero TD error: r + γ x(s')ᵀw = x(s)ᵀw
        let tr_back = Transition {
            state: 0,
            action: 0,
            next_state: 0,
            reward: 0.1,
        };
        let w_fix = DVector::from_row_slice(&[1.0, 0.0]);
        assert_eq!(td_step(&w_fix, &tr_back, 0.5, &x, 0.9), w_fix);
    }

    #[test]
    fn deterministic_sampling() {
        let mdp = Mdp::new(
            vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            0.9,
        )
        .unwrap();
        let policy = Policy::uniform(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let tr = sample_step(&mdp, &policy, 0, &mut rng);
            assert_eq!((tr.state, tr.action, tr.next_state, tr.reward), (0, 0, 1, 1.0));
        }
        let single = Mdp::new(vec![DMatrix::identity(1, 1)], DMatrix::from_element(1, 1, 2.0), 0.5)
            .unwrap();
        let tr = sample_step(&single, &Policy::uniform(1, 1), 0, &mut rng);
        assert_eq!((tr.state, tr.next_state, tr.reward), (0, 0, 2.0));
    }

    #[test]
    fn empirical_next_state_frequency() {
        let mdp = Mdp::new(
            vec![DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5])],
            DMatrix::zeros(2, 1),
            0.9,
        )
        .unwrap();
        let policy = Policy::uniform(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let stays = (0..n)
            .filter(|_| sample_step(&mdp, &policy, 0, &mut rng).next_state == 0)
            .count();
        let sigma = (n as f64 * 0.9 * 0.1).sqrt();
        assert!((stays as f64 - 0.9 * n as f64).abs() <= 3.0 * sigma, "{stays}");
    }

    #[test]
    fn energy_dominates_half_norm() {
        let w_star = DVector::from_row_slice(&[1.0, -2.0]);
        for w in [
            DVector::zeros(2),
            DVector::from_row_slice(&[2.0, -4.0]),
            DVector::from_row_slice(&[-3.0, 0.5]),
        ] {
            assert!(energy(&w, &w_star) >= 0.5 * w.norm_squared());
        }
    }

    #[test]
    fn stability_report_on_constant_trace() {
        let r = local_stability_report(&[0.0; 400], &LearningRateSchedule::power(0.5, 0.75), 1.0, 8)
            .unwrap();
        assert!(r.windows.iter().all(|w| w.max_dist == 0.0));
        assert!(r.non_increasing);
        assert_eq!(r.decrease_ratio(), None);
    }

    #[test]
    fn stability_report_on_decaying_trace() {
        let dists: Vec<f64> = (0..2000).map(|t| 1.0 / (1.0 + t as f64).sqrt()).collect();
        let sched = LearningRateSchedule::power(0.5, 0.75);
        let r = local_stability_report(&dists, &sched, 1.0, 8).unwrap();
        assert!(r.non_increasing);
        assert!(r.decrease_ratio().unwrap() > 2.0);
        for w in &r.windows {
            assert_eq!(w.end, m_horizon(&sched, w.start, 1.0).unwrap());
            assert!(w.end < 2000);
        }
    }
}
