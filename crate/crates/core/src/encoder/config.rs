use serde::{Deserialize, Serialize};

use crate::error::{CedError, Result};

/// Conformer hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub attention_heads: usize,
    pub conv_kernel: usize,
    /// Power of two; each factor of two is one stride-2 convolution.
    pub subsampling_factor: usize,
    pub ffn_expansion: usize,
    pub dropout: f64,
    pub input_dim: usize,
}

impl Default for EncoderConfig {
    /// 6 layers, d = 144, 4 heads, kernel 3, 4x subsampling, 4x feed-forward expansion.
    fn default() -> Self {
        Self {
            layers: 6,
            dim: 144,
            attention_heads: 4,
            conv_kernel: 3,
            subsampling_factor: 4,
            ffn_expansion: 4,
            dropout: 0.1,
            input_dim: 80,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CedError::InvalidInput(m));
        if self.layers == 0 || self.dim == 0 || self.input_dim == 0 {
            return bad("layers, dim and input_dim must be positive".into());
        }
        if self.attention_heads == 0 || !self.dim.is_multiple_of(self.attention_heads) {
            return bad(format!(
                "dim {} is not divisible by {} attention heads",
                self.dim, self.attention_heads
            ));
        }
        if self.subsampling_factor == 0 || !self.subsampling_factor.is_power_of_two() {
            return bad(format!(
                "subsampling_factor must be a power of two >= 1, got {}",
                self.subsampling_factor
            ));
        }
        if self.conv_kernel == 0 || self.conv_kernel.is_multiple_of(2) {
            return bad(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if self.ffn_expansion == 0 {
            return bad("ffn_expansion must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn subsampling_layers(&self) -> usize {
        self.subsampling_factor.trailing_zeros() as usize
    }

    /// Output length for `n_frames` input frames: `ceil(n / factor)`.
    pub fn output_frames(&self, n_frames: usize) -> usize {
        n_frames.div_ceil(self.subsampling_factor)
    }
}

/// Describes the features a checkpoint was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub n_channels: usize,
    pub frame_rate: usize,
    /// `"synthetic"` or `"fbank"`.
    pub frontend: String,
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_channels: 80,
            frame_rate: crate::features::FRAME_RATE,
            frontend: "synthetic".into(),
            normalize: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = EncoderConfig::default();
        c.validate().unwrap();
        assert_eq!(c.subsampling_layers(), 2);
        assert_eq!(c.output_frames(98), 25);
        assert_eq!(c.output_frames(1), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = EncoderConfig {
            attention_heads: 5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.attention_heads = 4;
        c.subsampling_factor = 3;
        assert!(c.validate().is_err());
        c.subsampling_factor = 0;
        assert!(c.validate().is_err());
        c.subsampling_factor = 1;
        c.validate().unwrap();
        assert_eq!(c.subsampling_layers(), 0);
    }
}
