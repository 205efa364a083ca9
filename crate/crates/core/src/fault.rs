//! Fault-tolerance model: repair-time mixture, expected failure count,
//! interruption time, ETTR, end-to-end objective and the optimal
//! checkpoint interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Measured share of process, pod and job restarts among failures.
pub const DEFAULT_MIX: [f64; 3] = [0.3, 0.6, 0.1];
/// Measured recovery times for process, pod and job restarts, in seconds.
pub const DEFAULT_RECOVERY: [f64; 3] = [141.0, 262.0, 307.0];

/// Failure statistics of the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    /// Failures per node per day.
    pub r_f_per_node_day: f64,
    /// Process-restart recovery time.
    pub u_bc: f64,
    /// Pod-restart recovery time.
    pub u_bp: f64,
    /// Job-restart recovery time.
    pub u_bj: f64,
    /// Probabilities of the three recovery paths.
    pub mix: [f64; 3],
    /// First initialization time.
    #[serde(default)]
    pub u0: f64,
    pub n_nodes: u64,
}

impl FaultModel {
    /// Default recovery mixture with the given rate and cluster size.
    pub fn with_defaults(r_f_per_node_day: f64, n_nodes: u64) -> Self {
        Self {
            r_f_per_node_day,
            u_bc: DEFAULT_RECOVERY[0],
            u_bp: DEFAULT_RECOVERY[1],
            u_bj: DEFAULT_RECOVERY[2],
            mix: DEFAULT_MIX,
            u0: 0.0,
            n_nodes,
        }
    }

    /// A model whose mean repair time is exactly `u_b` (single recovery path).
    pub fn with_repair_time(r_f_per_node_day: f64, n_nodes: u64, u_b: f64) -> Self {
        Self {
            r_f_per_node_day,
            u_bc: u_b,
            u_bp: u_b,
            u_bj: u_b,
            mix: [1.0, 0.0, 0.0],
            u0: 0.0,
            n_nodes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_f_per_node_day >= 0.0) || !self.r_f_per_node_day.is_finite() {
            return Err(Error::input("failure rate must be >= 0"));
        }
        if self.mix.iter().any(|m| !(*m >= 0.0)) || (self.mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::input("fault mix must sum to 1"));
        }
        if [self.u_bc, self.u_bp, self.u_bj, self.u0].iter().any(|u| !(*u >= 0.0)) {
            return Err(Error::input("recovery times must be >= 0"));
        }
        Ok(())
    }

    /// Failure rate of one node per second.
    pub fn rate_per_second(&self) -> f64 {
        self.r_f_per_node_day / SECONDS_PER_DAY
    }

    /// Failure rate of the whole cluster per second, `N·r_f`.
    pub fn cluster_rate(&self) -> f64 {
        self.n_nodes as f64 * self.rate_per_second()
    }
}

/// Checkpointing and run-length inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    /// Steps between checkpoint saves.
    pub interval: u64,
    /// Seconds per save.
    pub t_save: f64,
    /// Total training steps.
    pub steps: u64,
    /// Seconds per step.
    pub t_step: f64,
}

impl CheckpointPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(Error::input("checkpoint interval must be >= 1"));
        }
        if self.steps == 0 {
            return Err(Error::input("training steps must be >= 1"));
        }
        if !(self.t_step > 0.0) {
            return Err(Error::input("step time must be > 0"));
        }
        if !(self.t_save >= 0.0) {
            return Err(Error::input("checkpoint save time must be >= 0"));
        }
        Ok(())
    }

    pub fn training_time(&self) -> f64 {
        self.steps as f64 * self.t_step
    }

    /// `ceil(S / I)` checkpoint saves.
    pub fn saves(&self) -> u64 {
        self.steps.div_ceil(self.interval)
    }

    pub fn with_interval(&self, interval: u64) -> Self {
        Self {
            interval,
            ..self.clone()
        }
    }
}

/// ETTR and its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EttrReport {
    pub ettr: f64,
    #[serde(rename = "T_tr")]
    pub t_tr: f64,
    #[serde(rename = "T_in")]
    pub t_in: f64,
    #[serde(rename = "T_e2e")]
    pub t_e2e: f64,
    /// Expected number of failures.
    #[serde(rename = "F_f")]
    pub failures: f64,
    /// Mean repair time used.
    pub u_b: f64,
    #[serde(rename = "I_ckpt")]
    pub interval: u64,
}

/// `u_b = α·u_bc + β·u_bp + γ·u_bj`.
pub fn mean_repair_time(fault: &FaultModel) -> Result<f64> {
    fault.validate()?;
    Ok(fault.mix[0] * fault.u_bc + fault.mix[1] * fault.u_bp + fault.mix[2] * fault.u_bj)
}

/// `1 − N·r_f·(u_b + I·T_step/2)`, the share of wall-clock not lost to failures.
fn survival(fault: &FaultModel, policy: &CheckpointPolicy, u_b: f64) -> f64 {
    1.0 - fault.cluster_rate() * (u_b + policy.interval as f64 * policy.t_step / 2.0)
}

fn infeasible() -> Error {
    Error::Infeasible("failure rate too high for checkpointing to converge".into())
}

/// Expected failure count solving `F = N·r·(T_tr + T_in)` jointly with the
/// interruption time.
pub fn failure_fixed_point(fault: &FaultModel, policy: &CheckpointPolicy) -> Result<f64> {
    policy.validate()?;
    let u_b = mean_repair_time(fault)?;
    let rate = fault.cluster_rate();
    if rate == 0.0 {
        return Ok(0.0);
    }
    let denom = survival(fault, policy, u_b);
    if !(denom > 0.0) {
        return Err(infeasible());
    }
    let fixed = policy.training_time() + fault.u0 + policy.saves() as f64 * policy.t_save;
    Ok(rate * fixed / denom)
}

/// `T_in = u_0 + F·u_b + F·I·T/2 + ceil(S/I)·T_save`.
pub fn interruption_time(fault: &FaultModel, policy: &CheckpointPolicy, failures: f64, u_b: f64) -> f64 {
    fault.u0
        + failures * u_b
        + failures * policy.interval as f64 * policy.t_step / 2.0
        + policy.saves() as f64 * policy.t_save
}

/// ETTR from the failure fixed point, keeping `u_0` and the save-count ceiling.
pub fn ettr_exact(fault: &FaultModel, policy: &CheckpointPolicy) -> Result<EttrReport> {
    let failures = failure_fixed_point(fault, policy)?;
    let u_b = mean_repair_time(fault)?;
    let t_tr = policy.training_time();
    let t_in = interruption_time(fault, policy, failures, u_b);
    Ok(EttrReport {
        ettr: t_tr / (t_tr + t_in),
        t_tr,
        t_in,
        t_e2e: t_tr + t_in,
        failures,
        u_b,
        interval: policy.interval,
    })
}

/// `(1 − N·r·(u_b + I·T/2)) / (1 + T_save/(I·T))`.
pub fn ettr_closed_form(fault: &FaultModel, policy: &CheckpointPolicy) -> Result<f64> {
    policy.validate()?;
    let u_b = mean_repair_time(fault)?;
    let num = survival(fault, policy, u_b);
    if !(num > 0.0) {
        return Err(infeasible());
    }
    Ok(num / (1.0 + policy.t_save / (policy.interval as f64 * policy.t_step)))
}

/// Report built from the closed form: `T_e2e = G`, `T_in = G − T_tr`.
pub fn ettr_closed_form_report(fault: &FaultModel, policy: &CheckpointPolicy) -> Result<EttrReport> {
    let ettr = ettr_closed_form(fault, policy)?;
    let u_b = mean_repair_time(fault)?;
    let t_tr = policy.training_time();
    let t_e2e = e2e_objective(fault, policy)?;
    Ok(EttrReport {
        ettr,
        t_tr,
        t_in: t_e2e - t_tr,
        t_e2e,
        failures: fault.cluster_rate() * t_e2e,
        u_b,
        interval: policy.interval,
    })
}

/// `G = S·T·(1 + T_save/(I·T)) / (1 − N·r·(u_b + I·T/2))`.
pub fn e2e_objective(fault: &FaultModel, policy: &CheckpointPolicy) -> Result<f64> {
    policy.validate()?;
    let u_b = mean_repair_time(fault)?;
    let denom = survival(fault, policy, u_b);
    if !(denom > 0.0) {
        return Err(infeasible());
    }
    let i_t = policy.interval as f64 * policy.t_step;
    Ok(policy.training_time() * (1.0 + policy.t_save / i_t) / denom)
}

/// Why the optimal-interval search fell back to a default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalNote {
    /// The closed form had a real root and was rounded.
    Optimal,
    /// No failures: one final checkpoint (`I = S`).
    NoFailures,
    /// Negative discriminant: checkpointing cannot pay for itself.
    NoOptimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalChoice {
    #[serde(rename = "I_ckpt")]
    pub interval: u64,
    /// Unrounded closed-form optimum, when it exists.
    pub continuous: Option<f64>,
    pub ettr: Option<f64>,
    #[serde(rename = "T_e2e")]
    pub t_e2e: Option<f64>,
    pub note: IntervalNote,
}

/// Continuous optimum `(−T_save + √(T_save² − 2·T_save·u_b + 2·T_save/(N·r))) / T_step`.
pub fn continuous_optimal_interval(fault: &FaultModel, t_save: f64, t_step: f64) -> Result<Option<f64>> {
    let u_b = mean_repair_time(fault)?;
    let rate = fault.cluster_rate();
    if rate == 0.0 {
        return Ok(None);
    }
    let disc = t_save * t_save - 2.0 * t_save * u_b + 2.0 * t_save / rate;
    if disc < 0.0 {
        return Ok(None);
    }
    Ok(Some((-t_save + disc.sqrt()) / t_step))
}

/// Optimal checkpoint interval: the closed-form root rounded down and up
/// (clamped to `[1, S]`), keeping whichever minimizes `G`. The policy's
/// own interval is ignored.
pub fn optimal_ckpt_interval(fault: &FaultModel, policy: &CheckpointPolicy) -> Result<IntervalChoice> {
    policy.with_interval(1).validate()?;
    let u_b = mean_repair_time(fault)?;
    let rate = fault.cluster_rate();
    let at = |i: u64| -> (Option<f64>, Option<f64>) {
        let p = policy.with_interval(i);
        (ettr_closed_form(fault, &p).ok(), e2e_objective(fault, &p).ok())
    };
    if rate == 0.0 {
        let (ettr, g) = at(policy.steps);
        return Ok(IntervalChoice {
            interval: policy.steps,
            continuous: None,
            ettr,
            t_e2e: g,
            note: IntervalNote::NoFailures,
        });
    }
    let disc = policy.t_save * policy.t_save - 2.0 * policy.t_save * u_b + 2.0 * policy.t_save / rate;
    if disc < 0.0 {
        let (ettr, g) = at(policy.steps);
        return Ok(IntervalChoice {
            interval: policy.steps,
            continuous: None,
            ettr,
            t_e2e: g,
            note: IntervalNote::NoOptimum,
        });
    }
    let root = (-policy.t_save + disc.sqrt()) / policy.t_step;
    let clamp = |x: f64| (x.max(1.0) as u64).clamp(1, policy.steps);
    let lo = clamp(root.floor());
    let hi = clamp(root.ceil());
    let mut best: Option<(u64, f64)> = None;
    for i in [lo, hi] {
        if let Ok(g) = e2e_objective(fault, &policy.with_interval(i)) {
            if best.is_none_or(|(_, bg)| g < bg) {
                best = Some((i, g));
            }
        }
    }
    let Some((interval, g)) = best else {
        return Err(infeasible());
    };
    Ok(IntervalChoice {
        interval,
        continuous: Some(root),
        ettr: ettr_closed_form(fault, &policy.with_interval(interval)).ok(),
        t_e2e: Some(g),
        note: IntervalNote::Optimal,
    })
}

/// `S = ceil(tokens / (g_bs·s))`.
pub fn steps_from_tokens(tokens: f64, g_bs: u32, seq_len: u32) -> Result<u64> {
    let per_step = g_bs as f64 * seq_len as f64;
    if !(per_step > 0.0) || !(tokens > 0.0) {
        return Err(Error::input("tokens, g_bs and s must be > 0"));
    }
    Ok((tokens / per_step).ceil() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn llama_row() -> (FaultModel, CheckpointPolicy) {
        (
            FaultModel::with_repair_time(0.005, 16, 134.41),
            CheckpointPolicy {
                interval: 10,
                t_save: 4.19,
                steps: 953_675,
                t_step: 27.83,
            },
        )
    }

    fn sweep_fixture() -> (FaultModel, CheckpointPolicy) {
        (
            FaultModel::with_repair_time(0.01, 32, 60.0),
            CheckpointPolicy {
                interval: 37,
                t_save: 2.0,
                steps: 1_000_000,
                t_step: 28.0,
            },
        )
    }

    #[test]
    fn repair_mixture() {
        let f = FaultModel::with_defaults(0.0, 1);
        assert!((mean_repair_time(&f).unwrap() - 230.2).abs() < 1e-9);
        let mut g = f.clone();
        g.mix = [1.0, 0.0, 0.0];
        assert_eq!(mean_repair_time(&g).unwrap(), 141.0);
        let mut z = f.clone();
        z.u_bc = 0.0;
        z.u_bp = 0.0;
        z.u_bj = 0.0;
        assert_eq!(mean_repair_time(&z).unwrap(), 0.0);
        let mut bad = f;
        bad.mix = [0.3, 0.5, 0.1];
        assert_eq!(mean_repair_time(&bad).unwrap_err(), Error::Input("fault mix must sum to 1".into()));
    }

    #[test]
    fn fixed_point_matches_iteration() {
        let (f, p) = llama_row();
        let closed = failure_fixed_point(&f, &p).unwrap();
        // Iterate the two defining equations.
        let u_b = mean_repair_time(&f).unwrap();
        let mut failures = 0.0;
        for _ in 0..200 {
            let t_in = interruption_time(&f, &p, failures, u_b);
            failures = f.cluster_rate() * (p.training_time() + t_in);
        }
        assert!((closed - failures).abs() < 1e-9 * closed);
        assert!((closed - 24.95).abs() < 0.05, "{closed}");
    }

    #[test]
    fn zero_failures() {
        let (mut f, mut p) = llama_row();
        f.r_f_per_node_day = 0.0;
        assert_eq!(failure_fixed_point(&f, &p).unwrap(), 0.0);
        p.t_save = 0.0;
        assert_eq!(ettr_exact(&f, &p).unwrap().ettr, 1.0);
        assert_eq!(ettr_closed_form(&f, &p).unwrap(), 1.0);
        assert_eq!(e2e_objective(&f, &p).unwrap(), p.training_time());
    }

    #[test]
    fn no_failure_save_overhead_only() {
        let (mut f, p) = llama_row();
        f.r_f_per_node_day = 0.0;
        let r = ettr_exact(&f, &p).unwrap();
        let expect = 1.0 / (1.0 + p.saves() as f64 * p.t_save / p.training_time());
        assert!((r.ettr - expect).abs() < 1e-15);
    }

    #[test]
    fn table_row_reproduces() {
        let (f, p) = llama_row();
        let e = ettr_closed_form(&f, &p).unwrap();
        assert!((e - 0.98492).abs() < 2e-5, "{e}");
        let g = e2e_objective(&f, &p).unwrap();
        assert!((g / 26_947_190.75 - 1.0).abs() < 1e-3, "{g}");
    }

    #[test]
    fn optimal_interval_example() {
        let (f, p) = sweep_fixture();
        let choice = optimal_ckpt_interval(&f, &p).unwrap();
        assert_eq!(choice.interval, 37);
        assert!((choice.continuous.unwrap() - 37.04).abs() < 0.01);
        assert!((choice.ettr.unwrap() - 0.9959).abs() < 1e-4);
    }

    #[test]
    fn free_checkpoints_every_step() {
        let (f, mut p) = sweep_fixture();
        p.t_save = 0.0;
        let choice = optimal_ckpt_interval(&f, &p).unwrap();
        assert_eq!(choice.continuous, Some(0.0));
        assert_eq!(choice.interval, 1);
    }

    #[test]
    fn no_failures_single_checkpoint() {
        let (mut f, p) = sweep_fixture();
        f.r_f_per_node_day = 0.0;
        let choice = optimal_ckpt_interval(&f, &p).unwrap();
        assert_eq!(choice.interval, p.steps);
        assert_eq!(choice.note, IntervalNote::NoFailures);
    }

    #[test]
    fn infeasible_regime() {
        let f = FaultModel::with_repair_time(50.0, 1000, 3600.0);
        let p = CheckpointPolicy {
            interval: 100,
            t_save: 1.0,
            steps: 100,
            t_step: 10.0,
        };
        assert!(matches!(failure_fixed_point(&f, &p), Err(Error::Infeasible(_))));
        assert!(matches!(ettr_closed_form(&f, &p), Err(Error::Infeasible(_))));
        assert!(matches!(e2e_objective(&f, &p), Err(Error::Infeasible(_))));
    }

    #[test]
    fn tokens_to_steps() {
        assert_eq!(steps_from_tokens(1000.0, 4, 100).unwrap(), 3);
        assert_eq!(steps_from_tokens(800.0, 4, 100).unwrap(), 2);
    }

    proptest! {
        #[test]
        fn exact_and_closed_form_agree(
            r in 0.0f64..0.02, n in 1u64..128, u_b in 0.0f64..300.0,
            t_save in 0.0f64..10.0, i in 1u64..100, k in 1u64..2000, t in 1.0f64..40.0,
        ) {
            let f = FaultModel::with_repair_time(r, n, u_b);
            let p = CheckpointPolicy { interval: i, t_save, steps: i * k, t_step: t };
            prop_assume!(ettr_closed_form(&f, &p).is_ok());
            let a = ettr_exact(&f, &p).unwrap().ettr;
            let b = ettr_closed_form(&f, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }

        #[test]
        fn objective_is_step_time_over_ettr(
            r in 0.0f64..0.02, n in 1u64..128, u_b in 0.0f64..300.0,
            t_save in 0.0f64..10.0, i in 1u64..100, s in 1u64..1_000_000, t in 1.0f64..40.0,
        ) {
            let f = FaultModel::with_repair_time(r, n, u_b);
            let p = CheckpointPolicy { interval: i, t_save, steps: s, t_step: t };
            prop_assume!(ettr_closed_form(&f, &p).is_ok());
            let g = e2e_objective(&f, &p).unwrap();
            let alt = p.training_time() / ettr_closed_form(&f, &p).unwrap();
            prop_assert!((g - alt).abs() <= 1e-12 * g);
        }

        #[test]
        fn ettr_decreases_in_each_factor(
            r in 0.001f64..0.02, n in 1u64..64, u_b in 1.0f64..300.0, t_save in 0.5f64..10.0, bump in 1.01f64..2.0,
        ) {
            let f = FaultModel::with_repair_time(r, n, u_b);
            let p = CheckpointPolicy { interval: 20, t_save, steps: 100_000, t_step: 20.0 };
            prop_assume!(ettr_closed_form(&f, &p).is_ok());
            let base = ettr_closed_form(&f, &p).unwrap();
            let variants = [
                FaultModel::with_repair_time(r * bump, n, u_b),
                FaultModel::with_repair_time(r, n + 1, u_b),
                FaultModel::with_repair_time(r, n, u_b * bump),
            ];
            for v in variants {
                if let Ok(e) = ettr_closed_form(&v, &p) {
                    prop_assert!(e < base);
                }
            }
            let slower_save = CheckpointPolicy { t_save: t_save * bump, ..p.clone() };
            prop_assert!(ettr_closed_form(&f, &slower_save).unwrap() < base);
        }
    }
}
