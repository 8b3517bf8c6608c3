use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the two pooled modality embeddings are combined before classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStrategy {
    /// Concatenate then one linear layer.
    #[default]
    MidConcat,
    /// Elementwise sum then linear.
    Sum,
    /// Elementwise product then linear.
    EwMultiply,
    /// Sigmoid gates from the concatenation weight each modality, then sum and linear.
    Gated,
    /// Concatenate, one tanh hidden layer, then linear.
    Neural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LgfConfig {
    /// Snippets per sample (s).
    pub snippets: usize,
    /// Feature channels (C1).
    pub channels: usize,
    /// Pyramid layers (L).
    pub layers: usize,
    pub heads: usize,
    /// Window half-size of the first pyramid layer; layer `l` uses `window_base * 2^l`.
    pub window_base: usize,
    /// Explicit per-layer half-sizes, overriding the doubling schedule.
    pub windows: Option<Vec<usize>>,
    /// Odd kernel width of the dilated residual convolutions.
    pub conv_width: usize,
    /// One residual block per entry.
    pub dilations: Vec<usize>,
    /// Feed-forward hidden width as a multiple of `channels`.
    pub ffn_mult: usize,
    pub classes: usize,
    pub fusion: FusionStrategy,
    /// Hidden width of the `Neural` fusion head.
    pub neural_hidden: usize,
}

impl Default for LgfConfig {
    fn default() -> Self {
        Self {
            snippets: 4,
            channels: 16,
            layers: 2,
            heads: 2,
            window_base: 1,
            windows: None,
            conv_width: 3,
            dilations: vec![1, 2],
            ffn_mult: 2,
            classes: 6,
            fusion: FusionStrategy::MidConcat,
            neural_hidden: 16,
        }
    }
}

impl LgfConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.snippets == 0 || self.channels == 0 || self.classes == 0 {
            return err("snippets, channels and classes must be positive".into());
        }
        if self.layers == 0 {
            return err("at least one pyramid layer is required".into());
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return err(format!(
                "channels {} must be divisible by heads {}",
                self.channels, self.heads
            ));
        }
        if self.conv_width.is_multiple_of(2) {
            return err(format!("conv_width {} must be odd", self.conv_width));
        }
        if self.dilations.contains(&0) {
            return err("dilations must be positive".into());
        }
        if self.ffn_mult == 0 || self.neural_hidden == 0 {
            return err("ffn_mult and neural_hidden must be positive".into());
        }
        if let Some(w) = &self.windows {
            if w.len() != self.layers {
                return err(format!("{} window sizes given for {} layers", w.len(), self.layers));
            }
        }
        Ok(())
    }

    /// Window half-size of pyramid layer `layer` (0-based).
    pub fn window(&self, layer: usize) -> usize {
        match &self.windows {
            Some(w) => w[layer],
            None => self.window_base << layer,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Temporal reach of one dilated residual stack.
    pub fn conv_reach(&self) -> usize {
        let half = (self.conv_width - 1) / 2;
        self.dilations.iter().map(|d| d * half).sum()
    }

    /// How far (in snippets) an input row can influence output rows after `layers` pyramid layers.
    pub fn receptive_half_width(&self, layers: usize) -> usize {
        (0..layers).map(|l| self.window(l) + self.conv_reach()).sum()
    }
}
