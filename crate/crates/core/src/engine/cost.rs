use serde::{Deserialize, Serialize};

use super::breakdown::RecomputeBreakdown;
use super::EngineError;

/// Prefill cost coefficients. Defaults model an 8B model on one GPU: a
/// 2,560-token prompt recomputed from scratch takes about 0.2 s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Seconds per (query token, key token) pair.
    pub attn_cost_per_token_pair: f64,
    /// Seconds per recomputed token for projections and FFN.
    pub linear_cost_per_token: f64,
    pub kv_bytes_per_token: u64,
    /// Host-to-device bandwidth in bytes per second.
    pub pcie_bw: f64,
    /// Inter-node bandwidth in bytes per second.
    pub net_bw: f64,
    /// Share of compute spent in the first layer, which overlaps transfer.
    pub first_layer_fraction: f64,
    pub assembly_cost_per_block: f64,
    pub model_scale: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            attn_cost_per_token_pair: 6.5e-9,
            linear_cost_per_token: 6.2e-5,
            kv_bytes_per_token: 275_000,
            pcie_bw: 32e9,
            net_bw: 12.5e9,
            first_layer_fraction: 1.0 / 36.0,
            assembly_cost_per_block: 20e-6,
            model_scale: 1.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), EngineError> {
        let positive = [
            ("attn_cost_per_token_pair", self.attn_cost_per_token_pair),
            ("linear_cost_per_token", self.linear_cost_per_token),
            ("pcie_bw", self.pcie_bw),
            ("net_bw", self.net_bw),
            ("assembly_cost_per_block", self.assembly_cost_per_block),
            ("model_scale", self.model_scale),
            ("first_layer_fraction", self.first_layer_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EngineError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.first_layer_fraction >= 1.0 {
            return Err(EngineError::InvalidConfig("first_layer_fraction must be below 1".into()));
        }
        if self.kv_bytes_per_token == 0 {
            return Err(EngineError::InvalidConfig("kv_bytes_per_token must be positive".into()));
        }
        Ok(())
    }

    /// Compute seconds for `n_rec` recomputed tokens in an `n_total`-token
    /// prompt, excluding block assembly.
    pub fn compute_seconds(&self, n_rec: u64, n_total: u64) -> f64 {
        let (r, t) = (n_rec as f64, n_total as f64);
        self.model_scale * (self.attn_cost_per_token_pair * r * t + self.linear_cost_per_token * r)
    }

    /// Prefill time of a prompt recomputed from scratch.
    pub fn full_recompute_seconds(&self, n: u64) -> f64 {
        self.compute_seconds(n, n)
    }
}

/// Simulated prefill time. Transfer of reused KV overlaps the first layer;
/// the remaining layers run after both finish.
pub fn prefill_latency(b: &RecomputeBreakdown, cm: &CostModel) -> f64 {
    let compute = cm.compute_seconds(b.recomputed_tokens(), b.total_tokens)
        + cm.assembly_cost_per_block * b.reused_blocks as f64;
    let transfer = b.transferred_bytes as f64 / cm.pcie_bw + b.remote_bytes as f64 / cm.net_bw;
    let first = cm.first_layer_fraction * compute;
    transfer.max(first) + (compute - first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_magnitudes() {
        let cm = CostModel::default();
        let t = cm.full_recompute_seconds(2560);
        assert!((0.18..0.22).contains(&t), "{t}");
        cm.validate().unwrap();
        let bad = CostModel {
            first_layer_fraction: 1.0,
            ..CostModel::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_recompute_has_no_transfer_term() {
        let cm = CostModel::default();
        let b = RecomputeBreakdown::full_recompute(207, 1000, 800);
        let expected = 6.5e-9 * 2007.0 * 2007.0 + 6.2e-5 * 2007.0;
        assert!((prefill_latency(&b, &cm) - expected).abs() < 1e-12);
    }

    #[test]
    fn small_transfer_is_hidden() {
        let cm = CostModel::default();
        let mut b = RecomputeBreakdown::full_recompute(207, 1000, 800);
        let base = prefill_latency(&b, &cm);
        b.transferred_bytes = 1000;
        assert_eq!(prefill_latency(&b, &cm), base);
    }
}
