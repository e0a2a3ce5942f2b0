use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{NetError, Result};

/// One stage of bottleneck blocks; only the first block uses `stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub channels: usize,
    pub blocks: usize,
    pub stride: usize,
}

impl fmt::Display for StageSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}s{}", self.channels, self.blocks, self.stride)
    }
}

impl FromStr for StageSpec {
    type Err = NetError;

    /// `<channels>x<blocks>s<stride>`, e.g. `24x2s2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || NetError::Config(format!("stage `{s}` is not <channels>x<blocks>s<stride>"));
        let (c, rest) = s.split_once('x').ok_or_else(bad)?;
        let (b, st) = rest.split_once('s').ok_or_else(bad)?;
        Ok(Self {
            channels: c.trim().parse().map_err(|_| bad())?,
            blocks: b.parse().map_err(|_| bad())?,
            stride: st.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
    /// Bottleneck expansion factor `t`.
    pub expansion: usize,
    /// Polynomial order of the stem and head.
    pub q: u32,
    /// Polynomial order of the convolutions inside bottleneck blocks.
    pub block_q: u32,
    pub dropout: f64,
    /// Width of an optional hidden Self-MLP layer in the head; 0 for none.
    pub head_hidden: usize,
}

pub const NUM_CLASSES: usize = 2;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            image_size: 64,
            stem_channels: 16,
            stages: vec![
                StageSpec { channels: 24, blocks: 2, stride: 2 },
                StageSpec { channels: 32, blocks: 2, stride: 2 },
                StageSpec { channels: 64, blocks: 2, stride: 2 },
            ],
            expansion: 4,
            q: 3,
            block_q: 1,
            dropout: 0.2,
            head_hidden: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(NetError::Config(m));
        if !matches!(self.in_channels, 1 | 3) {
            return err(format!("in_channels {} must be 1 or 3", self.in_channels));
        }
        for (name, q) in [("q", self.q), ("block_q", self.block_q)] {
            if !(1..=7).contains(&q) {
                return err(format!("{name} = {q} outside [1, 7]"));
            }
        }
        if self.stem_channels == 0 || self.expansion == 0 {
            return err("stem width and expansion must be positive".into());
        }
        if self.stages.is_empty() {
            return err("at least one stage is required".into());
        }
        for s in &self.stages {
            if !matches!(s.stride, 1 | 2) {
                return err(format!("stage {s}: stride must be 1 or 2"));
            }
            if s.channels == 0 || s.blocks == 0 {
                return err(format!("stage {s}: channels and blocks must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        // stem (stride 2) must leave at least a 2×2 map for the max-pool
        if self.image_size < 4 {
            return err(format!("image size {} below 4", self.image_size));
        }
        Ok(())
    }

    /// Width of the concatenated feature vector fed to the head.
    pub fn feature_width(&self) -> usize {
        self.stem_channels + self.stages.iter().map(|s| s.channels).sum::<usize>()
    }

    /// Canonical `key=value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let stages: Vec<String> = self.stages.iter().map(ToString::to_string).collect();
        format!(
            "in_channels={}\nimage_size={}\nstem_channels={}\nstages={}\nexpansion={}\nq={}\nblock_q={}\ndropout={}\nhead_hidden={}\n",
            self.in_channels,
            self.image_size,
            self.stem_channels,
            stages.join(","),
            self.expansion,
            self.q,
            self.block_q,
            self.dropout,
            self.head_hidden
        )
    }

    /// Parse the output of [`to_text`](Self::to_text). Lines whose key is not a
    /// model key are returned untouched for the caller.
    pub fn from_text(text: &str) -> Result<(Self, BTreeMap<String, String>)> {
        let mut cfg = Self::default();
        let mut extra = BTreeMap::new();
        let mut seen = 0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| NetError::Config(format!("line `{line}` lacks `=`")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| NetError::Config(format!("{k}: `{v}` is not an integer")));
            match k {
                "in_channels" => cfg.in_channels = num(v)?,
                "image_size" => cfg.image_size = num(v)?,
                "stem_channels" => cfg.stem_channels = num(v)?,
                "stages" => cfg.stages = v.split(',').map(str::parse).collect::<Result<_>>()?,
                "expansion" => cfg.expansion = num(v)?,
                "q" => cfg.q = num(v)? as u32,
                "block_q" => cfg.block_q = num(v)? as u32,
                "dropout" => cfg.dropout = v.parse().map_err(|_| NetError::Config(format!("dropout: `{v}` is not a number")))?,
                "head_hidden" => cfg.head_hidden = num(v)?,
                _ => {
                    extra.insert(k.to_string(), v.to_string());
                    continue;
                }
            }
            seen += 1;
        }
        if seen != 9 {
            return Err(NetError::Config(format!("expected 9 model keys, found {seen}")));
        }
        cfg.validate()?;
        Ok((cfg, extra))
    }
}
