use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::ImageGeometry;
use crate::error::{GfrError, Result};
use crate::nn::{BasicBlock, BatchNorm2d, Conv2d, Layer, MaxPool2d, Relu, Sequential};

/// Named point in the extractor where "the feature" is read: after one of the
/// four blocks, or after global pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TapPoint {
    Block(u8),
    Feature,
}

impl TapPoint {
    pub const ALL: [TapPoint; 5] = [
        TapPoint::Block(1),
        TapPoint::Block(2),
        TapPoint::Block(3),
        TapPoint::Block(4),
        TapPoint::Feature,
    ];

    /// Number of blocks evaluated before this tap.
    pub fn depth(self) -> usize {
        match self {
            TapPoint::Block(k) => k as usize,
            TapPoint::Feature => 4,
        }
    }
}

impl fmt::Display for TapPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TapPoint::Block(k) => write!(f, "block{k}"),
            TapPoint::Feature => f.write_str("feature"),
        }
    }
}

impl FromStr for TapPoint {
    type Err = GfrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(TapPoint::Feature),
            "block1" => Ok(TapPoint::Block(1)),
            "block2" => Ok(TapPoint::Block(2)),
            "block3" => Ok(TapPoint::Block(3)),
            "block4" => Ok(TapPoint::Block(4)),
            other => Err(GfrError::config(format!(
                "unknown tap point `{other}` (expected block1..block4 or feature)"
            ))),
        }
    }
}

/// Backbone family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    /// Four conv-norm-relu-pool blocks.
    SmallCnn { channels: [usize; 4] },
    /// ResNet-18 with a 3×3 stem and no stem pooling; `width` is the first
    /// stage's channel count (64 for the standard network).
    ResNet18 { width: usize },
}

/// Backbone plus the input geometry it is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub backbone: Backbone,
    pub input: ImageGeometry,
}

impl Architecture {
    pub fn small_cnn(input: ImageGeometry, channels: [usize; 4]) -> Self {
        Architecture {
            backbone: Backbone::SmallCnn { channels },
            input,
        }
    }

    pub fn resnet18(input: ImageGeometry, width: usize) -> Self {
        Architecture {
            backbone: Backbone::ResNet18 { width },
            input,
        }
    }

    /// Canonical one-line text form used in checkpoint headers.
    pub fn descriptor(&self) -> String {
        let g = self.input;
        let body = match self.backbone {
            Backbone::SmallCnn { channels } => format!(
                "small_cnn channels={},{},{},{}",
                channels[0], channels[1], channels[2], channels[3]
            ),
            Backbone::ResNet18 { width } => format!("resnet18 width={width}"),
        };
        format!("{body} input={}x{}x{}", g.channels, g.height, g.width)
    }

    /// Rejects geometries the backbone cannot process.
    pub fn validate(&self) -> Result<()> {
        let g = self.input;
        if g.channels == 0 || g.height == 0 || g.width == 0 {
            return Err(GfrError::config("input geometry must be non-empty"));
        }
        match self.backbone {
            Backbone::SmallCnn { channels } => {
                if channels.contains(&0) {
                    return Err(GfrError::config("small_cnn channel counts must be positive"));
                }
                if g.height < 16 || g.width < 16 {
                    return Err(GfrError::config(format!(
                        "small_cnn needs inputs of at least 16x16, got {}x{}",
                        g.height, g.width
                    )));
                }
            }
            Backbone::ResNet18 { width } => {
                if width == 0 {
                    return Err(GfrError::config("resnet18 width must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        match self.backbone {
            Backbone::SmallCnn { channels } => channels[3],
            Backbone::ResNet18 { width } => width * 8,
        }
    }

    pub(crate) fn build_blocks<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Sequential> {
        let cin = self.input.channels;
        match self.backbone {
            Backbone::SmallCnn { channels } => {
                let mut prev = cin;
                channels
                    .iter()
                    .map(|&c| {
                        let block = Sequential::new(vec![
                            Layer::Conv(Conv2d::new(prev, c, 3, 1, 1, false, rng)),
                            Layer::Norm(BatchNorm2d::new(c)),
                            Layer::Relu(Relu::default()),
                            Layer::MaxPool(MaxPool2d::new(2)),
                        ]);
                        prev = c;
                        block
                    })
                    .collect()
            }
            Backbone::ResNet18 { width } => {
                let widths = [width, width * 2, width * 4, width * 8];
                let mut prev = width;
                widths
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let mut layers = Vec::new();
                        if i == 0 {
                            layers.push(Layer::Conv(Conv2d::new(cin, width, 3, 1, 1, false, rng)));
                            layers.push(Layer::Norm(BatchNorm2d::new(width)));
                            layers.push(Layer::Relu(Relu::default()));
                        }
                        let stride = if i == 0 { 1 } else { 2 };
                        layers.push(Layer::Residual(Box::new(BasicBlock::new(prev, w, stride, rng))));
                        layers.push(Layer::Residual(Box::new(BasicBlock::new(w, w, 1, rng))));
                        prev = w;
                        Sequential::new(layers)
                    })
                    .collect()
            }
        }
    }
}
