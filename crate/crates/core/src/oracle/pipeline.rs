//! Discrete-event simulation of the interleaved 1F1B schedule and the
//! activation ledger replayed from the same per-stage operation order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Fwd,
    Bwd,
    P2p,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: EventKind,
    pub micro_batch: u32,
    pub chunk: u32,
    pub start: f64,
    pub end: f64,
}

/// Per-device compute timelines plus the point-to-point transfers between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    /// `devices[r]`: forward, backward and idle events of stage `r`, in time order.
    pub devices: Vec<Vec<TraceEvent>>,
    /// Transfers, attributed to the receiving stage.
    pub transfers: Vec<(u32, TraceEvent)>,
}

impl PipelineTrace {
    /// Chrome trace-event JSON (`chrome://tracing`, Perfetto). Times in microseconds.
    pub fn to_chrome_json(&self) -> serde_json::Value {
        let mut events = Vec::new();
        let lanes = self.devices.len();
        let mut push = |lane: usize, e: &TraceEvent| {
            let name = match e.kind {
                EventKind::Fwd => format!("F{} c{}", e.micro_batch, e.chunk),
                EventKind::Bwd => format!("B{} c{}", e.micro_batch, e.chunk),
                EventKind::P2p => format!("send{} c{}", e.micro_batch, e.chunk),
                EventKind::Idle => "idle".to_string(),
            };
            events.push(serde_json::json!({
                "name": name,
                "cat": format!("{:?}", e.kind).to_lowercase(),
                "ph": "X",
                "pid": 0,
                "tid": lane,
                "ts": e.start * 1e6,
                "dur": (e.end - e.start) * 1e6,
            }));
        };
        for (r, dev) in self.devices.iter().enumerate() {
            for e in dev {
                push(r, e);
            }
        }
        for (r, e) in &self.transfers {
            push(lanes + *r as usize, e);
        }
        serde_json::json!({ "traceEvents": events })
    }

    /// Checks per-device ordering and that no two events on a device overlap.
    pub fn check(&self) -> Result<()> {
        for (r, dev) in self.devices.iter().enumerate() {
            for pair in dev.windows(2) {
                if pair[1].start < pair[0].end - 1e-12 * pair[0].end.abs().max(1.0) {
                    return Err(Error::Invariant(format!("overlapping events on stage {r}")));
                }
            }
        }
        Ok(())
    }
}

/// Inputs of one simulated step: per-layer times and the pipeline shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineInstance {
    pub p: u32,
    pub v: u32,
    /// Layers per chunk.
    pub l: u32,
    pub m_b: u32,
    pub fwd: f64,
    pub bwd: f64,
    pub pp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Op {
    backward: bool,
    chunk: u32,
    micro_batch: u32,
}

/// Forwards issued by stage `r` before its steady phase:
/// `(v−1)·p + 2·(p−r−1)`, capped at the total number of chunk passes.
pub fn warmup_count(p: u32, v: u32, m_b: u32, r: u32) -> u32 {
    ((v - 1) * p + 2 * (p - r - 1)).min(m_b * v)
}

fn micro_step(p: u32, v: u32, j: u32, backward: bool) -> Op {
    let group = j / p % v;
    Op {
        backward,
        chunk: if backward { v - 1 - group } else { group },
        micro_batch: j / (p * v) * p + j % p,
    }
}

fn check_instance(inst: &PipelineInstance) -> Result<()> {
    if inst.p == 0 || inst.v == 0 || inst.m_b == 0 {
        return Err(Error::input("p, v and m_b must be >= 1"));
    }
    if inst.m_b < inst.p {
        return Err(Error::Unsupported(format!(
            "schedule needs m_b >= p (got m_b = {}, p = {})",
            inst.m_b, inst.p
        )));
    }
    if inst.v > 1 && !inst.m_b.is_multiple_of(inst.p) {
        return Err(Error::Unsupported("interleaved schedule needs m_b divisible by p".into()));
    }
    Ok(())
}

/// Operation order of stage `r`: warmup forwards, alternating
/// forward/backward pairs, then the cooldown backwards.
fn stage_order(p: u32, v: u32, m_b: u32, r: u32) -> Vec<Op> {
    let total = m_b * v;
    let warm = warmup_count(p, v, m_b, r);
    let mut ops = Vec::with_capacity(2 * total as usize);
    for j in 0..warm {
        ops.push(micro_step(p, v, j, false));
    }
    let steady = total - warm;
    for i in 0..steady {
        ops.push(micro_step(p, v, warm + i, false));
        ops.push(micro_step(p, v, i, true));
    }
    for i in steady..total {
        ops.push(micro_step(p, v, i, true));
    }
    ops
}

/// Simulates one step and returns `(makespan, trace)`.
pub fn simulate_pipeline(inst: &PipelineInstance) -> Result<(f64, PipelineTrace)> {
    check_instance(inst)?;
    let (p, v, m_b) = (inst.p, inst.v, inst.m_b);
    let f_dur = inst.l as f64 * inst.fwd;
    let b_dur = inst.l as f64 * inst.bwd;
    let orders: Vec<Vec<Op>> = (0..p).map(|r| stage_order(p, v, m_b, r)).collect();

    // Completion time of each (stage, chunk, micro-batch, direction).
    let idx = |r: u32, c: u32, mb: u32, bwd: bool| -> usize {
        (((r * v + c) * m_b + mb) * 2 + bwd as u32) as usize
    };
    let mut done = vec![f64::NAN; (p * v * m_b * 2) as usize];
    let mut cursor = vec![0usize; p as usize];
    let mut free_at = vec![0.0f64; p as usize];
    let mut trace = PipelineTrace {
        devices: vec![Vec::new(); p as usize],
        transfers: Vec::new(),
    };

    let total_ops: usize = orders.iter().map(Vec::len).sum();
    let mut scheduled = 0usize;
    while scheduled < total_ops {
        let mut progressed = false;
        for r in 0..p {
            let ri = r as usize;
            while let Some(&op) = orders[ri].get(cursor[ri]) {
                // Upstream producer of this op's input, if any.
                let dep = if !op.backward {
                    if r > 0 {
                        Some((r - 1, op.chunk, false))
                    } else if op.chunk > 0 {
                        Some((p - 1, op.chunk - 1, false))
                    } else {
                        None
                    }
                } else if r + 1 < p {
                    Some((r + 1, op.chunk, true))
                } else if op.chunk + 1 < v {
                    Some((0, op.chunk + 1, true))
                } else {
                    Some((r, op.chunk, false))
                };
                let ready = match dep {
                    None => 0.0,
                    Some((dr, dc, db)) => {
                        let t = done[idx(dr, dc, op.micro_batch, db)];
                        if t.is_nan() {
                            break;
                        }
                        if dr != r {
                            let arrive = t + inst.pp;
                            if inst.pp > 0.0 {
                                trace.transfers.push((
                                    r,
                                    TraceEvent {
                                        kind: EventKind::P2p,
                                        micro_batch: op.micro_batch,
                                        chunk: op.chunk,
                                        start: t,
                                        end: arrive,
                                    },
                                ));
                            }
                            arrive
                        } else {
                            t
                        }
                    }
                };
                let start = ready.max(free_at[ri]);
                let end = start + if op.backward { b_dur } else { f_dur };
                if start > free_at[ri] && !trace.devices[ri].is_empty() {
                    trace.devices[ri].push(TraceEvent {
                        kind: EventKind::Idle,
                        micro_batch: op.micro_batch,
                        chunk: op.chunk,
                        start: free_at[ri],
                        end: start,
                    });
                }
                trace.devices[ri].push(TraceEvent {
                    kind: if op.backward { EventKind::Bwd } else { EventKind::Fwd },
                    micro_batch: op.micro_batch,
                    chunk: op.chunk,
                    start,
                    end,
                });
                done[idx(r, op.chunk, op.micro_batch, op.backward)] = end;
                free_at[ri] = end;
                cursor[ri] += 1;
                scheduled += 1;
                progressed = true;
            }
        }
        if !progressed {
            return Err(Error::Invariant("pipeline schedule deadlocked".into()));
        }
    }
    let first = trace
        .devices
        .iter()
        .filter_map(|d| d.first().map(|e| e.start))
        .fold(f64::INFINITY, f64::min);
    let last = free_at.iter().copied().fold(0.0, f64::max);
    Ok((last - first, trace))
}

/// Peak number of live chunk activations on each stage, and the peak bytes
/// when each live unit holds `unit_bytes` (one chunk, `l` layers).
pub fn simulate_activation_ledger(p: u32, v: u32, m_b: u32, unit_bytes: f64) -> Result<Vec<f64>> {
    check_instance(&PipelineInstance {
        p,
        v,
        l: 1,
        m_b,
        fwd: 0.0,
        bwd: 0.0,
        pp: 0.0,
    })?;
    Ok((0..p)
        .map(|r| {
            let mut live: i64 = 0;
            let mut peak: i64 = 0;
            for op in stage_order(p, v, m_b, r) {
                live += if op.backward { -1 } else { 1 };
                peak = peak.max(live);
            }
            peak as f64 * unit_bytes
        })
        .collect())
}
