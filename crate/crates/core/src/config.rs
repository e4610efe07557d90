use crate::error::{Error, Result};

/// Network and anchor-layout hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Square input extent in pixels.
    pub input_size: usize,
    /// Detection-level strides, shallow to deep.
    pub strides: [usize; 3],
    pub anchors_per_cell: usize,
    /// Background, face, mask.
    pub num_classes: usize,
    pub fpn_channels: usize,
    /// Weight on the upsampled deeper map in each top-down merge.
    pub fpn_coeff: f32,
    pub cbam_reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 640,
            strides: [8, 16, 32],
            anchors_per_cell: 2,
            num_classes: 3,
            fpn_channels: 64,
            fpn_coeff: 1.0,
            cbam_reduction: 4,
        }
    }
}

impl ModelConfig {
    pub fn with_input_size(input_size: usize) -> Self {
        ModelConfig {
            input_size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.input_size == 0 {
            return fail("input_size must be positive".into());
        }
        if self.strides[0] == 0 || !self.strides.windows(2).all(|w| w[0] < w[1]) {
            return fail(format!(
                "strides {:?} must be positive and strictly increasing",
                self.strides
            ));
        }
        if self.anchors_per_cell == 0 {
            return fail("anchors_per_cell must be positive".into());
        }
        if self.num_classes != 3 {
            return fail(format!("num_classes must be 3, got {}", self.num_classes));
        }
        if self.fpn_channels == 0 || !self.fpn_channels.is_multiple_of(4) {
            return fail(format!(
                "fpn_channels {} must be a positive multiple of 4",
                self.fpn_channels
            ));
        }
        if self.cbam_reduction == 0 || !self.fpn_channels.is_multiple_of(self.cbam_reduction) {
            return fail(format!(
                "cbam_reduction {} must divide fpn_channels {}",
                self.cbam_reduction, self.fpn_channels
            ));
        }
        if !self.fpn_coeff.is_finite() {
            return fail("fpn_coeff must be finite".into());
        }
        Ok(())
    }

    /// Feature-map extent at `stride` (ceil division).
    pub fn grid(&self, stride: usize) -> usize {
        self.input_size.div_ceil(stride)
    }
}
