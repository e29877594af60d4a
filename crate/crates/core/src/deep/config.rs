use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{DEFAULT_N_FEATURES, TAU};
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArchKind {
    VggCnn,
    CnnFullWidth,
    CnnFullHeight,
    Lstm,
    Transformer,
    InceptionResnet,
    Convnext,
    /// Time-averaged features into one dense layer; a logistic-regression
    /// baseline on the deep training path.
    Linear,
}

impl ArchKind {
    /// The seven sequence architectures.
    pub const SEQUENCE: [ArchKind; 7] = [
        ArchKind::VggCnn,
        ArchKind::CnnFullWidth,
        ArchKind::CnnFullHeight,
        ArchKind::Lstm,
        ArchKind::Transformer,
        ArchKind::InceptionResnet,
        ArchKind::Convnext,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::VggCnn => "vgg_cnn",
            ArchKind::CnnFullWidth => "cnn_full_width",
            ArchKind::CnnFullHeight => "cnn_full_height",
            ArchKind::Lstm => "lstm",
            ArchKind::Transformer => "transformer",
            ArchKind::InceptionResnet => "inception_resnet",
            ArchKind::Convnext => "convnext",
            ArchKind::Linear => "linear",
        }
    }

    /// Accepts the canonical names in any case, with `-` or `_` separators.
    pub fn parse(s: &str) -> Option<ArchKind> {
        let k = s.trim().to_ascii_lowercase().replace('-', "_");
        ArchKind::SEQUENCE.into_iter().chain([ArchKind::Linear]).find(|a| a.name() == k).or(match k.as_str() {
            "vgg" | "cnn" => Some(ArchKind::VggCnn),
            _ => None,
        })
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Preset> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Some(Preset::Desk),
            "paper" => Some(Preset::Paper),
            _ => None,
        }
    }
}

/// Per-family hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ArchParams {
    /// Three conv stages then a two-dense head; shared by the CNN kinds.
    Conv {
        channels: Vec<usize>,
        hidden: usize,
    },
    Lstm {
        hidden: usize,
        layers: usize,
        head_hidden: usize,
    },
    Transformer {
        d_model: usize,
        heads: usize,
        ff: usize,
        blocks: usize,
        head_hidden: usize,
    },
    InceptionResnet {
        channels: usize,
        blocks: usize,
        branch_kernels: Vec<usize>,
        head_hidden: usize,
    },
    Convnext {
        channels: usize,
        blocks: usize,
        kernel: usize,
        expansion: usize,
        head_hidden: usize,
    },
    Linear,
}

impl ArchParams {
    fn fits(&self, kind: ArchKind) -> bool {
        matches!(
            (kind, self),
            (ArchKind::VggCnn | ArchKind::CnnFullWidth | ArchKind::CnnFullHeight, ArchParams::Conv { .. })
                | (ArchKind::Lstm, ArchParams::Lstm { .. })
                | (ArchKind::Transformer, ArchParams::Transformer { .. })
                | (ArchKind::InceptionResnet, ArchParams::InceptionResnet { .. })
                | (ArchKind::Convnext, ArchParams::Convnext { .. })
                | (ArchKind::Linear, ArchParams::Linear)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub kind: ArchKind,
    pub preset: Preset,
    pub dropout: f64,
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default = "default_features")]
    pub n_features: usize,
    pub params: ArchParams,
}

fn default_tau() -> usize {
    TAU
}

fn default_features() -> usize {
    DEFAULT_N_FEATURES
}

fn quarter(n: usize) -> usize {
    (n / 4).max(1)
}

impl ArchitectureConfig {
    pub fn new(kind: ArchKind, preset: Preset) -> Self {
        let paper = ArchitectureConfig::paper(kind);
        if preset == Preset::Paper {
            return paper;
        }
        let params = match paper.params {
            ArchParams::Conv { channels, hidden } => ArchParams::Conv { channels: channels.into_iter().map(quarter).collect(), hidden: quarter(hidden) },
            ArchParams::Lstm { hidden, layers, head_hidden } => ArchParams::Lstm { hidden: quarter(hidden), layers, head_hidden: quarter(head_hidden) },
            ArchParams::Transformer { d_model, heads, ff, blocks, head_hidden } => {
                ArchParams::Transformer { d_model: quarter(d_model), heads, ff: quarter(ff), blocks, head_hidden: quarter(head_hidden) }
            }
            ArchParams::InceptionResnet { channels, blocks, branch_kernels, head_hidden } => {
                ArchParams::InceptionResnet { channels: quarter(channels), blocks, branch_kernels, head_hidden: quarter(head_hidden) }
            }
            ArchParams::Convnext { channels, blocks, kernel, expansion, head_hidden } => {
                ArchParams::Convnext { channels: quarter(channels), blocks, kernel, expansion, head_hidden: quarter(head_hidden) }
            }
            ArchParams::Linear => ArchParams::Linear,
        };
        ArchitectureConfig { preset: Preset::Desk, params, ..paper }
    }

    fn paper(kind: ArchKind) -> Self {
        let params = match kind {
            ArchKind::VggCnn => ArchParams::Conv { channels: vec![32, 64, 128], hidden: 216 },
            ArchKind::CnnFullWidth => ArchParams::Conv { channels: vec![128, 256, 512], hidden: 328 },
            ArchKind::CnnFullHeight => ArchParams::Conv { channels: vec![64, 128, 256], hidden: 312 },
            ArchKind::Lstm => ArchParams::Lstm { hidden: 160, layers: 5, head_hidden: 160 },
            ArchKind::Transformer => ArchParams::Transformer { d_model: 128, heads: 4, ff: 512, blocks: 8, head_hidden: 512 },
            ArchKind::InceptionResnet => ArchParams::InceptionResnet { channels: 56, blocks: 9, branch_kernels: vec![3, 5, 7], head_hidden: 56 },
            ArchKind::Convnext => ArchParams::Convnext { channels: 176, blocks: 3, kernel: 7, expansion: 4, head_hidden: 176 },
            ArchKind::Linear => ArchParams::Linear,
        };
        ArchitectureConfig { kind, preset: Preset::Paper, dropout: 0.1, tau: TAU, n_features: DEFAULT_N_FEATURES, params }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.params.fits(self.kind) {
            return Err(config_err!("{} architecture cannot use {:?} hyperparameters", self.kind, self.params));
        }
        let (lo, hi) = match self.preset {
            Preset::Paper => (0.1, 0.4),
            Preset::Desk => (0.0, 0.5),
        };
        if !(lo..=hi).contains(&self.dropout) {
            return Err(config_err!("dropout {} outside [{}, {}] for the {:?} preset", self.dropout, lo, hi, self.preset));
        }
        if self.tau == 0 || self.n_features == 0 {
            return Err(config_err!("input of {}x{} is empty", self.tau, self.n_features));
        }
        let positive = |what: &str, v: usize| if v == 0 { Err(config_err!("{} must be positive", what)) } else { Ok(()) };
        match &self.params {
            ArchParams::Conv { channels, hidden } => {
                if channels.is_empty() {
                    return Err(config_err!("conv architecture needs at least one stage"));
                }
                channels.iter().try_for_each(|&c| positive("channel width", c))?;
                positive("hidden width", *hidden)?;
            }
            ArchParams::Lstm { hidden, layers, head_hidden } => {
                positive("hidden size", *hidden)?;
                positive("layer count", *layers)?;
                positive("head width", *head_hidden)?;
            }
            ArchParams::Transformer { d_model, heads, ff, blocks, head_hidden } => {
                positive("d_model", *d_model)?;
                positive("head count", *heads)?;
                positive("feed-forward width", *ff)?;
                positive("block count", *blocks)?;
                positive("head width", *head_hidden)?;
                if d_model % heads != 0 {
                    return Err(config_err!("d_model {} is not divisible into {} heads", d_model, heads));
                }
            }
            ArchParams::InceptionResnet { channels, blocks, branch_kernels, head_hidden } => {
                positive("channel width", *channels)?;
                positive("block count", *blocks)?;
                positive("head width", *head_hidden)?;
                if branch_kernels.is_empty() || branch_kernels.iter().any(|k| k % 2 == 0) {
                    return Err(config_err!("branch kernels must be odd and nonempty, got {:?}", branch_kernels));
                }
            }
            ArchParams::Convnext { channels, blocks, kernel, expansion, head_hidden } => {
                positive("channel width", *channels)?;
                positive("block count", *blocks)?;
                positive("expansion", *expansion)?;
                positive("head width", *head_hidden)?;
                if kernel % 2 == 0 {
                    return Err(config_err!("depthwise kernel must be odd, got {}", kernel));
                }
            }
            ArchParams::Linear => {}
        }
        Ok(())
    }
}
