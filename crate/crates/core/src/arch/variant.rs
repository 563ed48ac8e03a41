use std::fmt;
use std::str::FromStr;

use crate::dsp::NUM_BINS;
use crate::error::{Error, Result};

pub const NUM_STAGES: usize = 6;

/// Layer type of each of the six stages: FC-GRU-GRU-FC-FC-FC.
pub const STAGE_KINDS: [StageKind; NUM_STAGES] = [
    StageKind::Fc,
    StageKind::Gru,
    StageKind::Gru,
    StageKind::Fc,
    StageKind::Fc,
    StageKind::Fc,
];

const SIX_EXITS: [usize; 6] = [0, 1, 2, 3, 4, 5];
const FOUR_EXITS: [usize; 4] = [0, 1, 3, 5];
const FINAL_EXIT: [usize; 1] = [5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKind {
    Fc,
    Gru,
}

/// How stages are wired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    /// Plain FC-GRU-GRU-FC-FC-FC chain; exits read a subset of activations.
    Chain,
    /// Mask layers plus auxiliary layers fed only by the previous auxiliary layer.
    Split,
    /// Like `Split`, but auxiliary layers also see the previous mask layer.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Baseline,
    Pretrain6Exits,
    Pretrain4Exits,
    SplitLayers6Exits,
    SplitLayers4Exits,
    ConcatLayers6Exits,
    ConcatLayers4Exits,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Baseline,
        Variant::Pretrain6Exits,
        Variant::Pretrain4Exits,
        Variant::SplitLayers6Exits,
        Variant::SplitLayers4Exits,
        Variant::ConcatLayers6Exits,
        Variant::ConcatLayers4Exits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Pretrain6Exits => "pretrain_6exits",
            Variant::Pretrain4Exits => "pretrain_4exits",
            Variant::SplitLayers6Exits => "split_layers_6exits",
            Variant::SplitLayers4Exits => "split_layers_4exits",
            Variant::ConcatLayers6Exits => "concat_layers_6exits",
            Variant::ConcatLayers4Exits => "concat_layers_4exits",
        }
    }

    /// Exit stages in ascending order.
    pub fn exits(self) -> &'static [usize] {
        match self {
            Variant::Baseline => &FINAL_EXIT,
            Variant::Pretrain6Exits | Variant::SplitLayers6Exits | Variant::ConcatLayers6Exits => {
                &SIX_EXITS
            }
            Variant::Pretrain4Exits | Variant::SplitLayers4Exits | Variant::ConcatLayers4Exits => {
                &FOUR_EXITS
            }
        }
    }

    pub fn has_exit(self, stage: usize) -> bool {
        self.exits().contains(&stage)
    }

    pub fn deepest_exit(self) -> usize {
        *self.exits().last().expect("every variant has an exit")
    }

    pub fn topology(self) -> Topology {
        match self {
            Variant::Baseline | Variant::Pretrain6Exits | Variant::Pretrain4Exits => Topology::Chain,
            Variant::SplitLayers6Exits | Variant::SplitLayers4Exits => Topology::Split,
            Variant::ConcatLayers6Exits | Variant::ConcatLayers4Exits => Topology::Concat,
        }
    }

    /// Variants that start from a trained baseline.
    pub fn needs_baseline(self) -> bool {
        matches!(self, Variant::Pretrain6Exits | Variant::Pretrain4Exits)
    }

    pub fn check_exit(self, exit: usize) -> Result<()> {
        if self.has_exit(exit) {
            Ok(())
        } else {
            Err(Error::InvalidExit {
                exit,
                variant: self.name().to_string(),
                available: self.exits().to_vec(),
            })
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown variant `{s}` (expected one of: {})",
                    Variant::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

/// Named size presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Profile {
    /// Original layer sizes: 400/400/400/600/600/257, auxiliary width 128.
    Full,
    /// Desk-scale sizes: a quarter of the full widths, but never below the
    /// mask width so that every chain stage can still host an exit.
    Tiny,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Tiny => "tiny",
        }
    }

    pub fn dims(self) -> Dims {
        match self {
            Profile::Full => Dims::full(),
            Profile::Tiny => Dims::tiny(),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "tiny" => Ok(Profile::Tiny),
            other => Err(Error::InvalidArgument(format!(
                "unknown profile `{other}` (expected full or tiny)"
            ))),
        }
    }
}

/// Layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    /// Mask width (frequency bins); also the input feature width.
    pub bins: usize,
    /// Output widths of the six chain layers. The last equals `bins`.
    pub chain: [usize; NUM_STAGES],
    /// Output width of every auxiliary layer in split/concat models.
    pub aux: usize,
}

impl Dims {
    pub fn full() -> Self {
        Self {
            bins: NUM_BINS,
            chain: [400, 400, 400, 600, 600, NUM_BINS],
            aux: 128,
        }
    }

    pub fn tiny() -> Self {
        let full = Self::full();
        let mut chain = full.chain;
        for w in chain.iter_mut() {
            *w = (*w / 4).max(full.bins);
        }
        Self {
            bins: full.bins,
            chain,
            aux: full.aux / 4,
        }
    }

    pub fn validate(&self, variant: Variant) -> Result<()> {
        let mut errs = Vec::new();
        if self.bins == 0 || self.aux == 0 || self.chain.contains(&0) {
            errs.push("all widths must be positive".to_string());
        }
        if variant.topology() == Topology::Chain {
            if self.chain[NUM_STAGES - 1] != self.bins {
                errs.push(format!(
                    "final layer width {} must equal the mask width {}",
                    self.chain[NUM_STAGES - 1],
                    self.bins
                ));
            }
            for &e in variant.exits() {
                if self.chain[e] < self.bins {
                    errs.push(format!(
                        "stage {e} has width {} but its exit needs {} activations",
                        self.chain[e], self.bins
                    ));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}
