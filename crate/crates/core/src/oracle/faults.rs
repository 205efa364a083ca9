//! Monte Carlo replay of a training run under Poisson node failures, and an
//! exhaustive scan over checkpoint intervals.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::{e2e_objective, mean_repair_time, CheckpointPolicy, FaultModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOptions {
    pub trials: u32,
    pub seed: u64,
    /// When false, a failure pauses training instead of rolling back to the
    /// last committed checkpoint.
    #[serde(default = "yes")]
    pub rollback: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: u32,
    /// Average number of failures per run.
    pub mean_failures: f64,
}

struct Trial<'a> {
    fault: &'a FaultModel,
    policy: &'a CheckpointPolicy,
    rollback: bool,
    rng: ChaCha8Rng,
    arrivals: Option<Exp<f64>>,
    time: f64,
    next_failure: f64,
    failures: u64,
}

impl Trial<'_> {
    fn draw_repair(&mut self) -> f64 {
        let u: f64 = self.rng.random();
        let m = self.fault.mix;
        if u < m[0] {
            self.fault.u_bc
        } else if u < m[0] + m[1] {
            self.fault.u_bp
        } else {
            self.fault.u_bj
        }
    }

    fn schedule_next_failure(&mut self) {
        self.next_failure = match &self.arrivals {
            Some(exp) => self.next_failure + exp.sample(&mut self.rng),
            None => f64::INFINITY,
        };
    }

    /// Spends `duration` of non-productive time; failures during it extend
    /// it by a fresh repair draw.
    fn recover(&mut self, duration: f64) {
        let mut remaining = duration;
        while self.next_failure < self.time + remaining {
            remaining -= self.next_failure - self.time;
            self.time = self.next_failure;
            self.failures += 1;
            remaining += self.draw_repair();
            self.schedule_next_failure();
        }
        self.time += remaining;
    }

    /// Returns total wall-clock time of the run.
    fn run(mut self) -> (f64, u64) {
        let steps = self.policy.steps;
        let interval = self.policy.interval;
        let step = self.policy.t_step;
        let save = self.policy.t_save;
        let cycle = interval as f64 * step + save;
        self.schedule_next_failure();
        self.recover(self.fault.u0);

        let mut committed = 0u64;
        // Time already spent on the current segment when rollback is off.
        let mut carried = 0.0;
        while committed < steps {
            // Skip whole segments that finish before the next failure.
            let full = (steps - committed) / interval;
            if full > 0 && carried == 0.0 {
                let fit = ((self.next_failure - self.time) / cycle).floor();
                let k = if fit.is_finite() { (fit.max(0.0) as u64).min(full) } else { full };
                if k > 0 {
                    self.time += k as f64 * cycle;
                    committed += k * interval;
                    continue;
                }
            }
            let seg_steps = interval.min(steps - committed);
            let seg_len = seg_steps as f64 * step + save - carried;
            if self.next_failure >= self.time + seg_len {
                self.time += seg_len;
                committed += seg_steps;
                carried = 0.0;
                continue;
            }
            let elapsed = self.next_failure - self.time;
            self.time = self.next_failure;
            self.failures += 1;
            self.schedule_next_failure();
            carried = if self.rollback { 0.0 } else { carried + elapsed };
            let repair = self.draw_repair();
            self.recover(repair);
        }
        (self.time, self.failures)
    }
}

/// Estimates ETTR by replaying `trials` independent runs. Trial `i` uses a
/// ChaCha8 stream `i` under `seed`, so results do not depend on thread count.
pub fn simulate_faults(
    fault: &FaultModel,
    policy: &CheckpointPolicy,
    opts: &MonteCarloOptions,
) -> Result<MonteCarloEstimate> {
    policy.validate()?;
    mean_repair_time(fault)?;
    if opts.trials == 0 {
        return Err(Error::input("need at least one trial"));
    }
    let rate = fault.cluster_rate();
    let arrivals = if rate > 0.0 {
        Some(Exp::new(rate).map_err(|e| Error::input(e.to_string()))?)
    } else {
        None
    };
    let productive = policy.training_time();
    let runs: Vec<(f64, u64)> = (0..opts.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            Trial {
                fault,
                policy,
                rollback: opts.rollback,
                rng,
                arrivals,
                time: 0.0,
                next_failure: 0.0,
                failures: 0,
            }
            .run()
        })
        .collect();
    let n = runs.len() as f64;
    let ettrs: Vec<f64> = runs.iter().map(|(t, _)| productive / t).collect();
    let identical = ettrs.iter().all(|e| *e == ettrs[0]);
    let mean = if identical { ettrs[0] } else { ettrs.iter().sum::<f64>() / n };
    let var = if runs.len() > 1 && !identical {
        ettrs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(MonteCarloEstimate {
        mean,
        std_error: (var / n).sqrt(),
        trials: opts.trials,
        mean_failures: runs.iter().map(|(_, f)| *f as f64).sum::<f64>() / n,
    })
}

/// Interval in `range` minimizing the end-to-end objective; ties go to the
/// smaller interval and infeasible intervals are skipped.
pub fn grid_search_interval(
    fault: &FaultModel,
    policy: &CheckpointPolicy,
    range: RangeInclusive<u64>,
) -> Result<u64> {
    if range.is_empty() || *range.start() == 0 {
        return Err(Error::input("interval range must be nonempty and start at >= 1"));
    }
    let mut best: Option<(u64, f64)> = None;
    for i in range {
        if let Ok(g) = e2e_objective(fault, &policy.with_interval(i)) {
            if best.is_none_or(|(_, bg)| g < bg) {
                best = Some((i, g));
            }
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Infeasible("no feasible interval in range".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fault::{ettr_closed_form, ettr_exact};

    fn opts(trials: u32) -> MonteCarloOptions {
        MonteCarloOptions {
            trials,
            seed: 7,
            rollback: true,
        }
    }

    #[test]
    fn no_failures_is_deterministic() {
        let f = FaultModel::with_repair_time(0.0, 8, 100.0);
        let p = CheckpointPolicy {
            interval: 7,
            t_save: 3.0,
            steps: 100,
            t_step: 2.0,
        };
        let est = simulate_faults(&f, &p, &opts(50)).unwrap();
        assert_eq!(est.std_error, 0.0);
        assert!((est.mean - ettr_exact(&f, &p).unwrap().ettr).abs() < 1e-15);
    }

    #[test]
    fn free_recovery_without_rollback_is_lossless() {
        let f = FaultModel::with_repair_time(5.0, 64, 0.0);
        let p = CheckpointPolicy {
            interval: 10,
            t_save: 0.0,
            steps: 1000,
            t_step: 30.0,
        };
        let est = simulate_faults(
            &f,
            &p,
            &MonteCarloOptions {
                rollback: false,
                ..opts(200)
            },
        )
        .unwrap();
        assert!(est.mean_failures > 1.0);
        assert!((est.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let f = FaultModel::with_defaults(0.01, 32);
        let p = CheckpointPolicy {
            interval: 20,
            t_save: 1.0,
            steps: 20_000,
            t_step: 10.0,
        };
        let a = simulate_faults(&f, &p, &opts(300)).unwrap();
        let b = simulate_faults(&f, &p, &opts(300)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn converges_to_closed_form() {
        let f = FaultModel::with_defaults(0.01, 32);
        let p = CheckpointPolicy {
            interval: 20,
            t_save: 1.0,
            steps: 20_000,
            t_step: 10.0,
        };
        let est = simulate_faults(&f, &p, &opts(10_000)).unwrap();
        let cf = ettr_closed_form(&f, &p).unwrap();
        assert!((est.mean - cf).abs() <= 3.0 * est.std_error, "{est:?} vs {cf}");
    }

    #[test]
    fn grid_examples() {
        let f = FaultModel::with_repair_time(0.01, 32, 60.0);
        let p = CheckpointPolicy {
            interval: 1,
            t_save: 2.0,
            steps: 1_000_000,
            t_step: 28.0,
        };
        assert_eq!(grid_search_interval(&f, &p, 1..=400).unwrap(), 37);
        let none = FaultModel::with_repair_time(0.0, 32, 60.0);
        assert_eq!(grid_search_interval(&none, &p, 1..=50).unwrap(), 50);
        assert!(grid_search_interval(&f, &p, std::ops::RangeInclusive::new(5, 4)).is_err());
    }
}
