//! Network configuration, ablation presets and the one-line text form stored
//! in checkpoints.

use std::fmt;
use std::str::FromStr;

use crate::attention::AttentionConfig;
use crate::error::{Error, Result};

/// Which image stack feeds the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Hyper3,
    Fused,
    Multispectral,
}

impl Modality {
    pub fn in_channels(self) -> usize {
        match self {
            Modality::Rgb | Modality::Hyper3 => 3,
            Modality::Fused => 6,
            Modality::Multispectral => 9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Hyper3 => "hyper3",
            Modality::Fused => "fused",
            Modality::Multispectral => "multispectral",
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rgb" => Modality::Rgb,
            "hyper3" => Modality::Hyper3,
            "fused" => Modality::Fused,
            "multispectral" => Modality::Multispectral,
            _ => return Err(Error::Config(format!("unknown modality '{s}'"))),
        })
    }
}

/// The five rows of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Baseline,
    Mamba,
    CoordAttention,
    WeightedFusion,
    All,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Baseline,
        Ablation::Mamba,
        Ablation::CoordAttention,
        Ablation::WeightedFusion,
        Ablation::All,
    ];

    /// `(comprehensive attention, mamba, weighted fusion)`. Weighted fusion
    /// needs a path to weigh, so its row keeps the coordinate path.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Ablation::Baseline => (false, false, false),
            Ablation::Mamba => (false, true, false),
            Ablation::CoordAttention => (true, false, false),
            Ablation::WeightedFusion => (true, false, true),
            Ablation::All => (true, true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::Mamba => "mamba",
            Ablation::CoordAttention => "ca",
            Ablation::WeightedFusion => "wf",
            Ablation::All => "all",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation '{s}' (baseline|mamba|ca|wf|all)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub modality: Modality,
    pub num_classes: usize,
    pub widths: [usize; 2],
    pub use_comprehensive_attention: bool,
    pub use_mamba: bool,
    pub use_weighted_fusion: bool,
    pub reduction: usize,
    pub state: usize,
    pub conv_width: usize,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(modality: Modality, num_classes: usize, ablation: Ablation, seed: u64) -> Self {
        let (ca, mamba, wf) = ablation.flags();
        NetworkConfig {
            modality,
            num_classes,
            widths: [16, 32],
            use_comprehensive_attention: ca,
            use_mamba: mamba,
            use_weighted_fusion: wf,
            reduction: 4,
            state: 4,
            conv_width: 3,
            seed,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        let (ca, mamba, wf) = ablation.flags();
        self.use_comprehensive_attention = ca;
        self.use_mamba = mamba;
        self.use_weighted_fusion = wf;
        self
    }

    pub fn in_channels(&self) -> usize {
        self.modality.in_channels()
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            channels: self.widths[0],
            use_coord: self.use_comprehensive_attention,
            use_mamba: self.use_mamba,
            use_weighted_fusion: self.use_weighted_fusion,
            reduction: self.reduction,
            state: self.state,
            conv_width: self.conv_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::Config(format!(
                "num_classes must be in 2..=256, got {}",
                self.num_classes
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.use_comprehensive_attention && (self.reduction == 0 || !self.widths[0].is_multiple_of(self.reduction)) {
            return Err(Error::Config(format!(
                "width {} is not divisible by reduction ratio {}",
                self.widths[0], self.reduction
            )));
        }
        if self.use_mamba && (self.state == 0 || self.conv_width == 0) {
            return Err(Error::Config("mamba state and conv width must be positive".into()));
        }
        self.attention().validate()
    }
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "modality={} classes={} widths={},{} ca={} mamba={} wf={} r={} n={} k={} seed={}",
            self.modality.name(),
            self.num_classes,
            self.widths[0],
            self.widths[1],
            self.use_comprehensive_attention as u8,
            self.use_mamba as u8,
            self.use_weighted_fusion as u8,
            self.reduction,
            self.state,
            self.conv_width,
            self.seed
        )
    }
}

impl FromStr for NetworkConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = NetworkConfig::new(Modality::Fused, 2, Ablation::Baseline, 0);
        let mut seen = Vec::new();
        for item in s.split_whitespace() {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config item '{item}' is not key=value")))?;
            if seen.contains(&key) {
                return Err(Error::Config(format!("config key '{key}' repeated")));
            }
            seen.push(key);
            let bad = || Error::Config(format!("bad value '{value}' for config key '{key}'"));
            let num = || value.parse::<usize>().map_err(|_| bad());
            let flag = || match value {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad()),
            };
            match key {
                "modality" => cfg.modality = value.parse()?,
                "classes" => cfg.num_classes = num()?,
                "widths" => {
                    let (a, b) = value.split_once(',').ok_or_else(bad)?;
                    cfg.widths = [a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?];
                }
                "ca" => cfg.use_comprehensive_attention = flag()?,
                "mamba" => cfg.use_mamba = flag()?,
                "wf" => cfg.use_weighted_fusion = flag()?,
                "r" => cfg.reduction = num()?,
                "n" => cfg.state = num()?,
                "k" => cfg.conv_width = num()?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
            }
        }
        for key in [
            "modality", "classes", "widths", "ca", "mamba", "wf", "r", "n", "k", "seed",
        ] {
            if !seen.contains(&key) {
                return Err(Error::Config(format!("config is missing '{key}'")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
