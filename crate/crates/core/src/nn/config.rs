use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How the 3×3 convolutions of a conv block are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvKind {
    /// Depthwise 3×3 followed by pointwise 1×1.
    Separable,
    /// Dense 3×3 across all channels.
    Standard,
}

impl ConvKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConvKind::Separable => "separable",
            ConvKind::Standard => "standard",
        }
    }
}

impl FromStr for ConvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "separable" => Ok(ConvKind::Separable),
            "standard" => Ok(ConvKind::Standard),
            other => Err(Error::invalid(format!(
                "unknown conv kind `{other}` (expected separable or standard)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Widths of encoders 1..3 and the bottleneck.
    pub filters: [usize; 4],
    pub pred_channels: usize,
    /// Adds auxiliary losses on the intermediate refinement maps.
    pub deep_supervision: bool,
    /// Inverse-addition attention refinement stages.
    pub attention: bool,
    /// Partial decoder producing the initial coarse prediction.
    pub partial_decoder: bool,
    /// Convolution style of encoders and bottleneck.
    pub encoder_conv: ConvKind,
    /// Convolution style of decoders and the partial decoder.
    pub decoder_conv: ConvKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            filters: [8, 16, 24, 32],
            pred_channels: 1,
            deep_supervision: false,
            attention: true,
            partial_decoder: true,
            encoder_conv: ConvKind::Separable,
            decoder_conv: ConvKind::Standard,
        }
    }
}

impl ModelConfig {
    pub fn with_filters(filters: [usize; 4]) -> Self {
        ModelConfig {
            filters,
            ..Default::default()
        }
    }

    /// Plain encoder-decoder without attention or partial decoder.
    pub fn plain_unet() -> Self {
        ModelConfig {
            attention: false,
            partial_decoder: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::invalid("in_channels must be positive"));
        }
        if self.filters.contains(&0) {
            return Err(Error::invalid(format!(
                "filter widths must be positive, got {:?}",
                self.filters
            )));
        }
        if self.pred_channels != 1 {
            return Err(Error::invalid("only single-channel prediction heads are supported"));
        }
        if self.partial_decoder && !self.attention {
            return Err(Error::invalid(
                "the partial decoder only feeds the attention stages; enable attention or disable it",
            ));
        }
        if self.deep_supervision && !self.attention {
            return Err(Error::invalid("deep supervision needs the attention stages"));
        }
        Ok(())
    }

    /// Canonical text form, used as the checkpoint architecture fingerprint.
    pub fn fingerprint(&self) -> String {
        let f = self.filters;
        format!(
            "in_channels={};filters={},{},{},{};pred_channels={};deep_supervision={};attention={};partial_decoder={};encoder_conv={};decoder_conv={}",
            self.in_channels,
            f[0],
            f[1],
            f[2],
            f[3],
            self.pred_channels,
            self.deep_supervision as u8,
            self.attention as u8,
            self.partial_decoder as u8,
            self.encoder_conv.as_str(),
            self.decoder_conv.as_str(),
        )
    }

    pub fn from_fingerprint(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let bad = |msg: String| Error::invalid(format!("bad fingerprint `{text}`: {msg}"));
        for part in text.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("missing `=` in `{part}`")))?;
            let flag = |v: &str| match v {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad(format!("`{k}` must be 0 or 1"))),
            };
            match k {
                "in_channels" => cfg.in_channels = v.parse().map_err(|_| bad(format!("bad in_channels `{v}`")))?,
                "filters" => cfg.filters = parse_filters(v)?,
                "pred_channels" => cfg.pred_channels = v.parse().map_err(|_| bad(format!("bad pred_channels `{v}`")))?,
                "deep_supervision" => cfg.deep_supervision = flag(v)?,
                "attention" => cfg.attention = flag(v)?,
                "partial_decoder" => cfg.partial_decoder = flag(v)?,
                "encoder_conv" => cfg.encoder_conv = v.parse()?,
                "decoder_conv" => cfg.decoder_conv = v.parse()?,
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fingerprint())
    }
}

/// Parses a comma-separated list of exactly four positive widths.
pub fn parse_filters(text: &str) -> Result<[usize; 4]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::invalid(format!(
            "expected 4 comma-separated filter widths, got `{text}`"
        )));
    }
    let mut out = [0usize; 4];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .ok()
            .filter(|&v: &usize| v > 0)
            .ok_or_else(|| Error::invalid(format!("filter width `{p}` is not a positive integer")))?;
    }
    Ok(out)
}
