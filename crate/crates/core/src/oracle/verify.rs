//! Oracle-versus-closed-form suites. Each suite returns a pass/fail record
//! with a short detail line; `run_all` bundles them into one report.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::ModelArchitecture;
use crate::basecost::{pipeline_time, PipelineShape, StageTimes};
use crate::error::{Error, Result};
use crate::evaluate::{EvalContext, Settings};
use crate::fault::{
    e2e_objective, ettr_closed_form, optimal_ckpt_interval, CheckpointPolicy, FaultModel, IntervalNote,
};
use crate::optim::{
    apply_activation_strategy, cp_overlap, ep_overlap, pp_overlap, tp_overlap, ActivationInputs,
    ActivationStrategy, OptimizationSet,
};
use crate::oracle::faults::{grid_search_interval, simulate_faults, MonteCarloOptions};
use crate::oracle::pipeline::{simulate_activation_ledger, simulate_pipeline, PipelineInstance};
use crate::profile::{Collective, CommEntry, ComputeEntry, HardwareSpec, ProfileDb};
use crate::tuner::{sweep, tune_step, tune_step_exhaustive, SearchSpace, SweepParam};

pub const SCHEMA_VERSION: u32 = 1;

/// Suite names in run order.
pub const SUITES: [&str; 9] = [
    "ettr-table",
    "optimal-interval",
    "interval-grid",
    "monte-carlo",
    "pipeline-des",
    "activation-ledger",
    "overlap-bounds",
    "tuner-soundness",
    "monotonicity",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Monte Carlo trials per configuration.
    pub trials: u32,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 20240601,
            trials: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub cases: u64,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

/// Runs every suite in `SUITES` order.
pub fn run_all(opts: &VerifyOptions) -> VerifyReport {
    let suites: Vec<SuiteResult> = SUITES
        .iter()
        .map(|name| run_suite(name, opts).expect("suite names are known"))
        .collect();
    VerifyReport {
        schema_version: SCHEMA_VERSION,
        passed: suites.iter().all(|s| s.passed),
        suites,
    }
}

/// Runs one suite. Internal errors count as failures, not `Err`.
pub fn run_suite(name: &str, opts: &VerifyOptions) -> Result<SuiteResult> {
    let start = Instant::now();
    let outcome = match name {
        "ettr-table" => ettr_table(),
        "optimal-interval" => optimal_interval(),
        "interval-grid" => interval_grid(opts.seed),
        "monte-carlo" => monte_carlo(opts),
        "pipeline-des" => pipeline_des(opts.seed),
        "activation-ledger" => activation_ledger(opts.seed),
        "overlap-bounds" => overlap_bounds(opts.seed),
        "tuner-soundness" => tuner_soundness(opts.seed),
        "monotonicity" => monotonicity(opts.seed),
        other => return Err(Error::input(format!("unknown verify suite `{other}`"))),
    };
    let (passed, cases, detail) = match outcome {
        Ok(o) => (o.failures.is_empty(), o.cases, o.summary()),
        Err(e) => (false, 0, format!("error: {e}")),
    };
    Ok(SuiteResult {
        name: name.to_string(),
        passed,
        cases,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Default)]
struct Outcome {
    cases: u64,
    failures: Vec<String>,
    note: String,
}

impl Outcome {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    fn summary(&self) -> String {
        let head = if self.failures.is_empty() {
            format!("{} cases ok", self.cases)
        } else {
            let shown: Vec<&str> = self.failures.iter().take(3).map(String::as_str).collect();
            format!("{}/{} cases failed: {}", self.failures.len(), self.cases, shown.join("; "))
        };
        if self.note.is_empty() {
            head
        } else {
            format!("{head} ({})", self.note)
        }
    }
}

/// Nodes, r_f, u_b, T_save, I, S, T_step, ETTR, T_e2e.
pub type EttrRow = (u64, f64, f64, f64, u64, u64, f64, f64, f64);

/// Reference rows.
pub const ETTR_TABLE: [EttrRow; 6] = [
    (16, 0.005, 134.41, 4.19, 10, 953_675, 27.83, 0.9849, 26_947_190.75),
    (32, 0.005, 147.72, 2.35, 10, 476_838, 27.99, 0.9911, 13_465_926.21),
    (64, 0.005, 174.34, 1.59, 10, 238_419, 28.33, 0.9932, 6_800_277.57),
    (128, 0.005, 227.58, 0.95, 10, 119_210, 28.83, 0.9939, 3_457_670.27),
    (8, 0.005, 127.75, 9.3, 10, 15_258_790, 24.46, 0.9632, 387_465_533.9),
    (4, 0.005, 134.41, 7.7, 10, 254_314, 74.5, 0.9896, 19_144_461.2),
];

fn ettr_table() -> Result<Outcome> {
    let mut o = Outcome::default();
    for (k, &(n, r, u_b, t_save, i, s, t_step, ettr, g)) in ETTR_TABLE.iter().enumerate() {
        let f = FaultModel::with_repair_time(r, n, u_b);
        let p = CheckpointPolicy {
            interval: i,
            t_save,
            steps: s,
            t_step,
        };
        let got = ettr_closed_form(&f, &p)?;
        let got_g = e2e_objective(&f, &p)?;
        o.check((got - ettr).abs() <= 2e-4, || format!("row {k}: ETTR {got:.5} vs {ettr}"));
        o.check((got_g - g).abs() / g <= 1e-3, || format!("row {k}: T_e2e {got_g:.1} vs {g}"));
    }
    Ok(o)
}

fn optimal_interval() -> Result<Outcome> {
    let mut o = Outcome::default();
    let f = FaultModel::with_repair_time(0.01, 32, 60.0);
    let p = CheckpointPolicy {
        interval: 1,
        t_save: 2.0,
        steps: 1_000_000,
        t_step: 28.0,
    };
    let choice = optimal_ckpt_interval(&f, &p)?;
    o.check(choice.interval == 37, || format!("I* = {}", choice.interval));
    let ettr = choice.ettr.unwrap_or(f64::NAN);
    o.check((ettr - 0.9959).abs() <= 1e-4, || format!("ETTR {ettr:.5}"));
    let grid = grid_search_interval(&f, &p, 1..=2_000)?;
    o.check(grid == choice.interval, || format!("grid {grid} vs {}", choice.interval));
    Ok(o)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn interval_grid(seed: u64) -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tried = 0;
    while o.cases < 120 && tried < 10_000 {
        tried += 1;
        let f = FaultModel::with_repair_time(
            log_uniform(&mut rng, 1e-3, 5e-2),
            rng.random_range(1..=256),
            rng.random_range(10.0..600.0),
        );
        let p = CheckpointPolicy {
            interval: 1,
            t_save: log_uniform(&mut rng, 0.5, 60.0),
            steps: rng.random_range(1_000..=20_000),
            t_step: rng.random_range(1.0..60.0),
        };
        let Ok(choice) = optimal_ckpt_interval(&f, &p) else { continue };
        if choice.note != IntervalNote::Optimal {
            continue;
        }
        let Ok(grid) = grid_search_interval(&f, &p, 1..=p.steps) else { continue };
        o.check(choice.interval.abs_diff(grid) <= 1, || {
            format!("closed form {} vs grid {grid} for {f:?} {p:?}", choice.interval)
        });
    }
    Ok(o)
}

/// Configurations for the Monte Carlo suite: (r_f, nodes, u_b mix?, S, T_step, T_save).
/// `None` repair time means the default three-way mix.
const MC_CONFIGS: [(f64, u64, Option<f64>, u64, f64, f64); 10] = [
    (0.001, 64, None, 200_000, 10.0, 1.0),
    (0.002, 32, None, 100_000, 10.0, 1.0),
    (0.003, 16, Some(134.41), 50_000, 20.0, 1.0),
    (0.005, 16, Some(134.41), 953_675, 27.83, 4.19),
    (0.0075, 32, None, 20_000, 10.0, 2.0),
    (0.01, 32, None, 20_000, 10.0, 1.0),
    (0.0125, 8, None, 50_000, 5.0, 1.0),
    (0.015, 64, Some(60.0), 20_000, 5.0, 2.0),
    (0.0175, 16, None, 30_000, 8.0, 1.0),
    (0.02, 8, None, 50_000, 10.0, 1.0),
];

fn monte_carlo(opts: &VerifyOptions) -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut worst: f64 = 0.0;
    for (k, &(r, n, u_b, s, t_step, t_save)) in MC_CONFIGS.iter().enumerate() {
        let f = match u_b {
            Some(u) => FaultModel::with_repair_time(r, n, u),
            None => FaultModel::with_defaults(r, n),
        };
        let base = CheckpointPolicy {
            interval: 1,
            t_save,
            steps: s,
            t_step,
        };
        let p = base.with_interval(optimal_ckpt_interval(&f, &base)?.interval);
        let cf = ettr_closed_form(&f, &p)?;
        let est = simulate_faults(
            &f,
            &p,
            &MonteCarloOptions {
                trials: opts.trials,
                seed: opts.seed.wrapping_add(k as u64),
                rollback: true,
            },
        )?;
        let z = (est.mean - cf) / est.std_error;
        worst = worst.max(z.abs());
        o.check(z.abs() <= 3.0, || {
            format!("config {k}: mc {:.5} ± {:.1e} vs {cf:.5} (z = {z:.2})", est.mean, est.std_error)
        });
    }
    o.note = format!("max |z| = {worst:.2}");
    Ok(o)
}

fn pipeline_des(seed: u64) -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for _ in 0..50 {
        let p = rng.random_range(1..=8);
        let inst = PipelineInstance {
            p,
            v: 1,
            l: rng.random_range(1..=4),
            m_b: rng.random_range(p..=4 * p + 4),
            fwd: rng.random_range(0.1..5.0),
            bwd: rng.random_range(0.1..10.0),
            pp: 0.0,
        };
        let (makespan, trace) = simulate_pipeline(&inst)?;
        trace.check()?;
        let analytic = pipeline_time(
            &StageTimes {
                fwd: inst.fwd,
                bwd: inst.bwd,
                ..StageTimes::default()
            },
            &PipelineShape {
                p: inst.p,
                v: 1,
                l: inst.l,
                m_b: inst.m_b,
            },
        )?
        .total;
        let rel = (makespan - analytic).abs() / analytic;
        o.check(rel <= 1e-12, || format!("{inst:?}: des {makespan} vs {analytic}"));
    }
    Ok(o)
}

fn activation_ledger(seed: u64) -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1ed9e5);
    for _ in 0..20 {
        let p: u32 = rng.random_range(1..=8);
        let v: u32 = rng.random_range(1..=4);
        // Enough micro-batches to fill the warmup, a multiple of p.
        let m_b = p * (v + 1 + rng.random_range(0..=3));
        let unit = rng.random_range(1u32..=1 << 20) as f64;
        let peaks = simulate_activation_ledger(p, v, m_b, unit)?;
        let want = (v * p + p - 1) as f64 * unit;
        o.check(peaks[0] == want, || format!("p={p} v={v} m_b={m_b}: {} vs {want}", peaks[0]));
    }
    Ok(o)
}

fn overlap_bounds(seed: u64) -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e71a9);
    let within = |lo: f64, x: f64, hi: f64| lo <= x && x <= hi;
    for _ in 0..1_000 {
        // Dyadic rationals keep sums and differences exact.
        let a = rng.random_range(0u32..1 << 20) as f64 / 1024.0;
        let b = rng.random_range(0u32..1 << 20) as f64 / 1024.0;
        let k: u32 = rng.random_range(1..=8);
        let (lo, hi) = (a.max(b), a + b);
        let tp = tp_overlap(a, b, k, 1.0, 1.0);
        o.check(within(lo, tp, hi), || format!("tp({a}, {b}, {k}) = {tp}"));
        let cp = cp_overlap(a, b, k, 1.0, 1.0);
        o.check(within(lo, cp, hi), || format!("cp({a}, {b}, {k}) = {cp}"));
        let ep = ep_overlap(a, b, 1.0, 1.0);
        o.check(within(lo, ep, hi), || format!("ep({a}, {b}) = {ep}"));
        // The PP term is the exposed remainder; the hop plus the work it hides is bounded.
        let pp = b + pp_overlap(a, b, 1.0, 1.0);
        o.check(within(lo, pp, hi), || format!("pp({a}, {b}) total = {pp}"));
    }
    let hw = synthetic_hardware();
    for _ in 0..1_000 {
        let fwd = rng.random_range(0u32..1 << 20) as f64 / 1024.0;
        let bwd = rng.random_range(0u32..1 << 20) as f64 / 1024.0;
        let input = ActivationInputs {
            factor: 1.0,
            layers_per_unit: 1.0,
            layer_act: 1.0,
            attention_act: 0.5,
            input_act: 0.1,
            fwd,
            bwd,
            qkv_time: 0.0,
            attention_time: 0.0,
        };
        let out = apply_activation_strategy(ActivationStrategy::FullRecompute, &input, &hw)?;
        o.check(out.bwd - bwd == fwd, || format!("recompute: {} - {bwd} != {fwd}", out.bwd));
    }
    Ok(o)
}

fn subset(rng: &mut ChaCha8Rng, pool: &[u32], max: usize) -> Vec<u32> {
    let mut out: Vec<u32> = pool.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
    if out.is_empty() {
        out.push(pool[rng.random_range(0..pool.len())]);
    }
    out.truncate(max);
    out
}

fn tuner_soundness(seed: u64) -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e4e);
    let fx = Synthetic::new(ModelArchitecture::dense(16, 1024, 2048, 16, 4096, 32000), 100e9, 50e9);
    let ctx = fx.ctx();
    let mut opt_pool = vec![OptimizationSet::baseline()];
    opt_pool.extend(OptimizationSet::default_allowlist());
    let mut nonempty = 0;
    while o.cases < 30 {
        let k = rng.random_range(1..=2);
        let optimizations = (0..k).map(|_| opt_pool[rng.random_range(0..opt_pool.len())].clone()).collect();
        let space = SearchSpace {
            t: subset(&mut rng, &[1, 2, 4, 8, 16], 3),
            c: subset(&mut rng, &[1, 2], 2),
            p: subset(&mut rng, &[1, 2, 4, 8], 2),
            e: vec![1],
            d: subset(&mut rng, &[1, 2, 4], 2),
            m_bs: subset(&mut rng, &[1, 2, 3, 4], 2),
            v: subset(&mut rng, &[1, 2, 4], 2),
            g_n: [4, 8, 16, 32][rng.random_range(0..4)],
            g_bs: [8, 16, 32][rng.random_range(0..3)],
            optimizations,
        };
        if space.raw_size(fx.arch.layers) > 256 {
            continue;
        }
        let top_k = rng.random_range(1..=6);
        let pruned = tune_step(&ctx, &space, top_k)?;
        let full = tune_step_exhaustive(&ctx, &space, top_k)?;
        let a = serde_json::to_string(&pruned.candidates).map_err(|e| Error::Invariant(e.to_string()))?;
        let b = serde_json::to_string(&full.candidates).map_err(|e| Error::Invariant(e.to_string()))?;
        if !pruned.candidates.is_empty() {
            nonempty += 1;
        }
        o.check(a == b, || format!("pruned and exhaustive differ on {space:?}"));
    }
    o.note = format!("{nonempty} spaces with feasible candidates");
    Ok(o)
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn monotonicity(seed: u64) -> Result<Outcome> {
    let mut o = Outcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3030);
    let mut sampled = 0;
    while sampled < 50 {
        let r = log_uniform(&mut rng, 1e-3, 2e-2);
        let n: u64 = rng.random_range(2..=64);
        let u_b = rng.random_range(30.0..400.0);
        let p = CheckpointPolicy {
            interval: rng.random_range(5..=100),
            t_save: rng.random_range(0.5..20.0),
            steps: 100_000,
            t_step: rng.random_range(5.0..40.0),
        };
        let ettr = |r: f64, n: u64, u_b: f64, t_save: f64| {
            ettr_closed_form(&FaultModel::with_repair_time(r, n, u_b), &CheckpointPolicy { t_save, ..p })
        };
        let grid = |k: usize| (1..=6).map(move |j| 1.0 + 0.25 * (j as f64) * (k as f64 + 1.0) / 4.0);
        let series: [Result<Vec<f64>>; 4] = [
            (0..6).map(|j| ettr(r, n + j, u_b, p.t_save)).collect(),
            grid(0).map(|m| ettr(r * m, n, u_b, p.t_save)).collect(),
            grid(1).map(|m| ettr(r, n, u_b * m, p.t_save)).collect(),
            grid(2).map(|m| ettr(r, n, u_b, p.t_save * m)).collect(),
        ];
        // Only grids that stay feasible end to end count.
        if series.iter().any(|s| s.is_err()) {
            continue;
        }
        sampled += 1;
        for (name, s) in ["N_nodes", "r_f", "u_b", "T_save"].iter().zip(series) {
            let s = s?;
            o.check(strictly_decreasing(&s), || format!("ETTR not decreasing in {name}: {s:?}"));
        }
    }
    let (values, steps) = v_sweep_curve()?;
    let best = steps
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    o.check(best > 0 && best + 1 < steps.len(), || format!("v sweep has no interior minimum: {values:?} -> {steps:?}"));
    o.note = format!("v sweep argmin at v = {}", values[best]);
    Ok(o)
}

/// Step time across `v` for a fixed plan on the synthetic instance whose PP
/// hop is expensive enough that the per-chunk hop cost outgrows the bubble saving.
pub fn v_sweep_curve() -> Result<(Vec<u32>, Vec<f64>)> {
    v_sweep_curve_at(V_SWEEP_P2P)
}

fn v_sweep_curve_at(p2p: f64) -> Result<(Vec<u32>, Vec<f64>)> {
    let fx = Synthetic::new(ModelArchitecture::dense(48, 1024, 2048, 16, 4096, 32000), 100e9, p2p);
    let ctx = fx.ctx();
    let space = SearchSpace {
        t: vec![1],
        c: vec![1],
        p: vec![4],
        e: vec![1],
        d: vec![1],
        m_bs: vec![1],
        v: Vec::new(),
        g_n: 4,
        g_bs: 8,
        optimizations: vec![OptimizationSet::baseline()],
    };
    let values = vec![1u32, 2, 3, 4, 6, 12];
    let labels: Vec<String> = values.iter().map(u32::to_string).collect();
    let rows = sweep(&ctx, &space, None, SweepParam::V, &labels)?;
    let steps = rows
        .iter()
        .map(|r| r.t_step.ok_or_else(|| Error::Invariant(format!("v = {} infeasible", r.value))))
        .collect::<Result<Vec<_>>>()?;
    Ok((values, steps))
}

/// Point-to-point bandwidth of the v-sweep instance.
pub const V_SWEEP_P2P: f64 = 2e10;

/// Self-contained model, hardware and profile for oracle runs and tests.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub arch: ModelArchitecture,
    pub hw: HardwareSpec,
    pub profile: ProfileDb,
    pub settings: Settings,
}

pub fn synthetic_hardware() -> HardwareSpec {
    HardwareSpec {
        h2d_bandwidth: Some(32e9),
        d2h_bandwidth: Some(32e9),
        disk_load_bandwidth: None,
        disk_write_bandwidth: None,
        cpu_memory: Some(512e9),
        cpu_ops: Some(1e11),
        gpu_peak_flops: 400e12,
        gpu_memory: 80e9,
        gpus_per_node: 8,
        hbm_bandwidth: 2e12,
        optimizer_throughput: 2e10,
    }
}

impl Synthetic {
    /// Uniform 200 TFLOPS compute; collectives at `bandwidth`, point-to-point at `p2p`.
    pub fn new(arch: ModelArchitecture, bandwidth: f64, p2p: f64) -> Self {
        let comm = [
            Collective::AllGather,
            Collective::ReduceScatter,
            Collective::AllReduce,
            Collective::AllToAll,
            Collective::P2p,
        ]
        .into_iter()
        .map(|collective| CommEntry {
            collective,
            group_size: None,
            message_bytes: 1e6,
            bandwidth: if collective == Collective::P2p { p2p } else { bandwidth },
            beta: 1.0,
            lambda: None,
        })
        .collect();
        Self {
            arch,
            hw: synthetic_hardware(),
            profile: ProfileDb {
                compute: vec![ComputeEntry::uniform("*", 200e12)],
                comm,
            },
            settings: Settings::default(),
        }
    }

    pub fn ctx(&self) -> EvalContext<'_> {
        EvalContext {
            arch: &self.arch,
            hw: &self.hw,
            profile: &self.profile,
            settings: &self.settings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn v_sweep_is_u_shaped() {
        let (v, t) = v_sweep_curve().unwrap();
        let best = (0..t.len()).min_by(|&a, &b| t[a].total_cmp(&t[b])).unwrap();
        assert_eq!(v[best], 3);
        // Fast links remove the penalty and the deepest interleave wins.
        let (_, t) = v_sweep_curve_at(2e11).unwrap();
        assert!(t.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn fast_suites_pass() {
        let opts = VerifyOptions::default();
        for name in ["ettr-table", "optimal-interval", "pipeline-des", "activation-ledger", "overlap-bounds"] {
            let r = run_suite(name, &opts).unwrap();
            assert!(r.passed, "{r:?}");
        }
        assert!(run_suite("nope", &opts).is_err());
    }
}
