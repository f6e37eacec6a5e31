use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Large kernel: dilated-reparam depthwise conv.
    LarK,
    /// Small kernel: plain 3×3 depthwise conv.
    SmaK,
}

/// One parallel depthwise branch of a dilated-reparam kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilatedBranch {
    pub kernel: usize,
    pub dilation: usize,
}

impl DilatedBranch {
    /// Side length of the dense kernel this branch is equivalent to.
    pub fn span(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub kernel_size: usize,
    pub dilated_branches: Vec<DilatedBranch>,
    pub channels: usize,
}

impl BlockSpec {
    /// Large-kernel block; the branch set for a 13×13 kernel is
    /// `(5,1) (7,2) (3,3) (3,4) (3,5)` on top of the dense 13×13 kernel.
    pub fn lark(channels: usize, kernel_size: usize) -> Self {
        let dilated_branches = match kernel_size {
            13 => vec![(5, 1), (7, 2), (3, 3), (3, 4), (3, 5)],
            11 => vec![(5, 1), (5, 2), (3, 3), (3, 4)],
            9 => vec![(5, 1), (5, 2), (3, 3)],
            7 => vec![(5, 1), (3, 2)],
            5 => vec![(3, 1), (3, 2)],
            _ => vec![],
        }
        .into_iter()
        .map(|(kernel, dilation)| DilatedBranch { kernel, dilation })
        .collect();
        Self {
            kind: BlockKind::LarK,
            kernel_size,
            dilated_branches,
            channels,
        }
    }

    pub fn smak(channels: usize) -> Self {
        Self {
            kind: BlockKind::SmaK,
            kernel_size: 3,
            dilated_branches: Vec::new(),
            channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if self.channels == 0 {
            return Err(Error::Config("block needs at least one channel".into()));
        }
        for b in &self.dilated_branches {
            if b.kernel % 2 == 0 || b.dilation == 0 {
                return Err(Error::Config(format!("invalid branch {b:?}")));
            }
            if b.span() > self.kernel_size {
                return Err(Error::Config(format!(
                    "branch {}x{} dilation {} spans {} > kernel {}",
                    b.kernel,
                    b.kernel,
                    b.dilation,
                    b.span(),
                    self.kernel_size
                )));
            }
        }
        Ok(())
    }
}

/// Number of LarK and SmaK blocks in one stage (LarK blocks come first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDepth {
    pub lark: usize,
    pub smak: usize,
}

impl StageDepth {
    pub fn total(&self) -> usize {
        self.lark + self.smak
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub stage_depths: Vec<StageDepth>,
    pub stage_channels: Vec<usize>,
    /// SmaK blocks in the bottleneck; the first runs on the deepest encoder
    /// grid, the rest after one more stride-2 reduction.
    pub bottleneck_depth: usize,
    pub input_resolution: (usize, usize),
    pub lark_kernel: usize,
    pub expansion: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Reduced configuration for CPU-scale experiments: 64×64 inputs,
    /// channels `[32, 64, 128]`, depths `[1, 1, 2+0]`.
    pub fn desk() -> Self {
        Self {
            stage_depths: vec![
                StageDepth { lark: 0, smak: 1 },
                StageDepth { lark: 1, smak: 0 },
                StageDepth { lark: 2, smak: 0 },
            ],
            stage_channels: vec![32, 64, 128],
            bottleneck_depth: 2,
            input_resolution: (64, 64),
            lark_kernel: 13,
            expansion: 4,
        }
    }

    /// UniRepLKNet-N geometry: depths `[2, 2, 8+0]`, channels `[80, 160, 320]`,
    /// 256×256 inputs.
    pub fn full_scale() -> Self {
        Self {
            stage_depths: vec![
                StageDepth { lark: 0, smak: 2 },
                StageDepth { lark: 2, smak: 0 },
                StageDepth { lark: 8, smak: 0 },
            ],
            stage_channels: vec![80, 160, 320],
            bottleneck_depth: 2,
            input_resolution: (256, 256),
            lark_kernel: 13,
            expansion: 4,
        }
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.stage_channels[2] * 2
    }

    /// Spatial size of pyramid level `k` (0-based) for an input of `h × w`.
    pub fn level_size(h: usize, w: usize, k: usize) -> (usize, usize) {
        (h >> (2 + k), w >> (2 + k))
    }

    pub fn check_resolution(h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Input(format!("input {h}x{w} is not divisible by 32")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_depths.len() != 3 || self.stage_channels.len() != 3 {
            return Err(Error::Config("exactly three stages are required".into()));
        }
        if self.stage_channels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "stage channels {:?} must strictly increase",
                self.stage_channels
            )));
        }
        if self.stage_channels[0] < 2 || self.stage_channels[0] % 2 != 0 {
            return Err(Error::Config("first stage needs an even channel count".into()));
        }
        if self.stage_depths.iter().any(|d| d.total() == 0) {
            return Err(Error::Config("every stage needs at least one block".into()));
        }
        if self.bottleneck_depth == 0 {
            return Err(Error::Config("bottleneck needs at least one block".into()));
        }
        if self.expansion == 0 {
            return Err(Error::Config("expansion ratio must be positive".into()));
        }
        BlockSpec::lark(1, self.lark_kernel).validate()?;
        let (h, w) = self.input_resolution;
        Self::check_resolution(h, w)
    }
}
