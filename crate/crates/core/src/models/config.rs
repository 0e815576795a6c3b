use std::fmt;

use crate::error::{bail, Error, Result};
use crate::mask::MaskKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Depth {
    /// Plain four-layer chain.
    Shallow,
    /// Entry conv, residual blocks, three-layer tail.
    Deep,
}

/// How the partition mask enters the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionStrategy {
    /// Concatenation-based late fusion: a three-conv mask stream, concatenated before the tail.
    Clf,
    /// Addition-based fusion: a mask stream mirroring the frame stream, summed.
    Af,
    /// Concatenation-based early fusion: frame and mask stacked as a two-channel input.
    Cef,
}

impl FusionStrategy {
    pub fn short_name(self) -> &'static str {
        match self {
            FusionStrategy::Clf => "CLF",
            FusionStrategy::Af => "AF",
            FusionStrategy::Cef => "CEF",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CLF" => Ok(FusionStrategy::Clf),
            "AF" => Ok(FusionStrategy::Af),
            "CEF" => Ok(FusionStrategy::Cef),
            _ => bail!(Parse, "unknown fusion strategy {s:?}"),
        }
    }
}

/// Which network variant to build.
///
/// `mask_kind` and `fusion` are ignored when `use_mask` is false.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub depth: Depth,
    pub use_mask: bool,
    pub mask_kind: MaskKind,
    pub fusion: FusionStrategy,
    /// Residual blocks in each feature stream (deep models only).
    pub residual_blocks: usize,
}

pub const DEFAULT_RESIDUAL_BLOCKS: usize = 4;

impl Default for ModelConfig {
    fn default() -> Self {
        Self::single_input(Depth::Deep)
    }
}

impl ModelConfig {
    pub fn single_input(depth: Depth) -> Self {
        Self {
            depth,
            use_mask: false,
            mask_kind: MaskKind::Mean,
            fusion: FusionStrategy::Af,
            residual_blocks: DEFAULT_RESIDUAL_BLOCKS,
        }
    }

    pub fn two_input(depth: Depth, mask_kind: MaskKind, fusion: FusionStrategy) -> Self {
        Self { use_mask: true, mask_kind, fusion, ..Self::single_input(depth) }
    }

    pub fn with_blocks(self, residual_blocks: usize) -> Self {
        Self { residual_blocks, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == Depth::Deep && self.residual_blocks == 0 {
            bail!(Config, "a deep model needs at least one residual block");
        }
        if self.depth == Depth::Shallow && self.use_mask && self.fusion != FusionStrategy::Cef {
            bail!(
                Config,
                "the shallow model has a single stream; {} fusion needs the deep model",
                self.fusion.short_name()
            );
        }
        Ok(())
    }

    /// Mask the model consumes, if any.
    pub fn mask(&self) -> Option<MaskKind> {
        self.use_mask.then_some(self.mask_kind)
    }

    /// Input naming in the `1-in` / `2-in+MM+AF` style.
    pub fn input_label(&self) -> String {
        if self.use_mask {
            format!("2-in+{}+{}", self.mask_kind.short_name(), self.fusion.short_name())
        } else {
            "1-in".into()
        }
    }

    /// Parses the form produced by `Display`, e.g. `deep blocks=4 2-in+MM+AF`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad model config {s:?}"));
        let tok: Vec<&str> = s.split_whitespace().collect();
        let mut cfg = match tok.first() {
            Some(&"deep") => Self::single_input(Depth::Deep),
            Some(&"shallow") => Self::single_input(Depth::Shallow),
            _ => return Err(bad()),
        };
        for t in &tok[1..] {
            if let Some(n) = t.strip_prefix("blocks=") {
                cfg.residual_blocks = n.parse().map_err(|_| bad())?;
            } else if *t == "1-in" {
                cfg.use_mask = false;
            } else if let Some(rest) = t.strip_prefix("2-in+") {
                let (m, f) = rest.split_once('+').ok_or_else(bad)?;
                cfg.use_mask = true;
                cfg.mask_kind = MaskKind::parse(m)?;
                cfg.fusion = FusionStrategy::parse(f)?;
            } else {
                return Err(bad());
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.depth {
            Depth::Deep => write!(f, "deep blocks={} {}", self.residual_blocks, self.input_label()),
            Depth::Shallow => write!(f, "shallow {}", self.input_label()),
        }
    }
}

impl std::str::FromStr for ModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_parse_roundtrip() {
        let cases = [
            ModelConfig::default(),
            ModelConfig::single_input(Depth::Shallow),
            ModelConfig::two_input(Depth::Deep, MaskKind::Mean, FusionStrategy::Af).with_blocks(2),
            ModelConfig::two_input(Depth::Deep, MaskKind::Boundary, FusionStrategy::Clf),
            ModelConfig::two_input(Depth::Shallow, MaskKind::Boundary, FusionStrategy::Cef),
        ];
        for c in cases {
            let back = ModelConfig::parse(&c.to_string()).unwrap();
            assert_eq!(back.to_string(), c.to_string());
            assert_eq!(back.mask(), c.mask());
        }
        assert_eq!(
            ModelConfig::two_input(Depth::Deep, MaskKind::Mean, FusionStrategy::Af).to_string(),
            "deep blocks=4 2-in+MM+AF"
        );
    }

    #[test]
    fn contradictions_rejected() {
        assert!(ModelConfig::default().with_blocks(0).validate().is_err());
        assert!(ModelConfig::two_input(Depth::Shallow, MaskKind::Mean, FusionStrategy::Af).validate().is_err());
        assert!(ModelConfig::single_input(Depth::Shallow).with_blocks(0).validate().is_ok());
        assert!(ModelConfig::parse("wide 1-in").is_err());
        assert!(ModelConfig::parse("deep 2-in+XX+AF").is_err());
    }
}
