use serde::{Deserialize, Serialize};

use crate::attention::{C2qSource, FlowOptions, FusionVariant};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden size; encoder outputs are `2d` wide.
    pub d: usize,
    pub dropout: f64,
    pub use_cgde: bool,
    pub use_fgin: bool,
    pub lambda_a: f64,
    pub lambda_s: f64,
    pub c2q_source: C2qSource,
    pub fusion: FusionVariant,
    pub max_span_len: usize,
    pub sup_threshold: f64,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_kernel: usize,
    pub highway_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 80,
            dropout: 0.2,
            use_cgde: true,
            use_fgin: true,
            lambda_a: 0.5,
            lambda_s: 2.0,
            c2q_source: C2qSource::Decomposed,
            fusion: FusionVariant::Interaction,
            max_span_len: 30,
            sup_threshold: 0.5,
            char_dim: 8,
            char_filters: 100,
            char_kernel: 5,
            highway_layers: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lambda_a > 0.0 && self.lambda_s > 0.0) {
            return bad(format!(
                "loss weights must be positive, got {} and {}",
                self.lambda_a, self.lambda_s
            ));
        }
        if !(0.0..1.0).contains(&self.sup_threshold) || self.sup_threshold == 0.0 {
            return bad(format!(
                "sup_threshold {} outside (0, 1)",
                self.sup_threshold
            ));
        }
        if self.char_dim == 0 || self.char_filters == 0 || self.char_kernel == 0 {
            return bad("char CNN sizes must be positive".into());
        }
        Ok(())
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            use_cgde: self.use_cgde,
            use_fgin: self.use_fgin,
            c2q_source: self.c2q_source,
            fusion: self.fusion,
        }
    }

    /// The four ablation settings as `(label, use_cgde, use_fgin)`.
    pub fn ablation_rows() -> [(&'static str, bool, bool); 4] {
        [
            ("Baseline", false, false),
            ("Our Model", true, true),
            ("CGDe", true, false),
            ("FGIn", false, true),
        ]
    }
}
