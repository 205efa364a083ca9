//! Parallel execution plan: the `(t, c, p, e, d, m_bs, g_bs, v)` tuple and the
//! quantities derived from it.

use serde::{Deserialize, Serialize};

use crate::arch::{ModelArchitecture, StructureKind};
use crate::error::{Error, Result};

/// One point of the parallel-strategy space.
///
/// World size is `t·c·p·e·d`: expert parallelism is counted as its own
/// multiplicative dimension of the device mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParallelPlan {
    /// Tensor parallel size.
    pub t: u32,
    /// Context parallel size.
    pub c: u32,
    /// Pipeline parallel size.
    pub p: u32,
    /// Expert parallel size.
    pub e: u32,
    /// Data parallel size.
    pub d: u32,
    /// Micro batch size.
    pub m_bs: u32,
    /// Global batch size.
    pub g_bs: u32,
    /// Model chunks per pipeline stage (interleaving depth).
    #[serde(default = "one")]
    pub v: u32,
}

fn one() -> u32 {
    1
}

impl ParallelPlan {
    #[allow(clippy::too_many_arguments)]
    pub fn new(t: u32, c: u32, p: u32, e: u32, d: u32, m_bs: u32, g_bs: u32, v: u32) -> Self {
        Self {
            t,
            c,
            p,
            e,
            d,
            m_bs,
            g_bs,
            v,
        }
    }

    /// Total devices used by the plan.
    pub fn world_size(&self) -> u64 {
        self.t as u64 * self.c as u64 * self.p as u64 * self.e as u64 * self.d as u64
    }

    /// Nodes occupied when each node holds `gpus_per_node` devices.
    pub fn nodes(&self, gpus_per_node: u32) -> u64 {
        self.world_size().div_ceil(gpus_per_node.max(1) as u64)
    }

    /// Micro-batches per step per pipeline, `g_bs / (m_bs·d)`; must be integral.
    pub fn micro_batches(&self) -> Result<u32> {
        let per_step = self.m_bs as u64 * self.d as u64;
        if per_step == 0 || !(self.g_bs as u64).is_multiple_of(per_step) {
            return Err(Error::input(format!(
                "global batch {} is not divisible by m_bs·d = {}",
                self.g_bs, per_step
            )));
        }
        Ok((self.g_bs as u64 / per_step) as u32)
    }

    /// Transformer layers per model chunk, `L / (p·v)`.
    pub fn layers_per_chunk(&self, layers: u32) -> Result<u32> {
        let chunks = self.p as u64 * self.v as u64;
        if chunks == 0 || !(layers as u64).is_multiple_of(chunks) {
            return Err(Error::shape(
                "L",
                format!("{layers} layers do not split into p·v = {chunks} chunks"),
            ));
        }
        Ok((layers as u64 / chunks) as u32)
    }

    /// Lexicographic ranking key `(t, c, p, e, d, m_bs, v)`.
    pub fn sort_key(&self) -> (u32, u32, u32, u32, u32, u32, u32) {
        (self.t, self.c, self.p, self.e, self.d, self.m_bs, self.v)
    }

    /// Checks every structural rule that ties the plan to a model.
    pub fn validate(&self, arch: &ModelArchitecture) -> Result<()> {
        for (name, value) in [
            ("t", self.t),
            ("c", self.c),
            ("p", self.p),
            ("e", self.e),
            ("d", self.d),
            ("m_bs", self.m_bs),
            ("g_bs", self.g_bs),
            ("v", self.v),
        ] {
            if value == 0 {
                return Err(Error::input(format!("plan dimension {name} must be >= 1")));
            }
        }
        self.micro_batches()?;
        self.layers_per_chunk(arch.layers)?;
        check_divides("h", arch.hidden, self.t)?;
        check_divides("a", arch.heads, self.t)?;
        check_divides("s", arch.seq_len, self.c)?;
        match arch.structure {
            StructureKind::Dense => {
                if self.e != 1 {
                    return Err(Error::shape(
                        "e",
                        format!("dense model cannot use expert parallel size {}", self.e),
                    ));
                }
            }
            StructureKind::Moe => {
                let experts = arch.num_experts.unwrap_or(0);
                check_divides("n_experts", experts, self.e)?;
            }
        }
        Ok(())
    }
}

fn check_divides(dim: &'static str, value: u32, by: u32) -> Result<()> {
    if by == 0 || !value.is_multiple_of(by) {
        return Err(Error::shape(
            dim,
            format!("{value} is not divisible by {by}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_quantities() {
        let plan = ParallelPlan::new(8, 1, 8, 1, 2, 2, 256, 1);
        assert_eq!(plan.world_size(), 128);
        assert_eq!(plan.nodes(8), 16);
        assert_eq!(plan.micro_batches().unwrap(), 64);
        assert_eq!(plan.layers_per_chunk(80).unwrap(), 10);
    }

    #[test]
    fn rejects_fractional_micro_batches() {
        let plan = ParallelPlan::new(1, 1, 1, 1, 1, 3, 16, 1);
        assert!(plan.micro_batches().is_err());
    }

    #[test]
    fn nodes_round_up() {
        let plan = ParallelPlan::new(4, 1, 1, 1, 1, 1, 1, 1);
        assert_eq!(plan.nodes(8), 1);
    }
}
