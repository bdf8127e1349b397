//! Network configuration: the three channel presets plus fusion and side-head
//! hyper-parameters, with a plain `key=value` text form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stage order of `stage_channels`.
pub const STAGE_NAMES: [&str; 11] = [
    "encoder0", "encoder1", "encoder2", "encoder3", "encoder4", "decoder4", "decoder3", "decoder2", "decoder1", "decoder0", "decoder_out",
];

/// Smallest input side: the depth-7 first block pools five times.
pub const MIN_INPUT: usize = 32;

pub type Triple = (usize, usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("malformed config line {line}: `{text}`")]
    Syntax { line: usize, text: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn bad(key: &str, value: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.into(), msg: msg.to_string() }
}

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V, ConfigError>
where
    V::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| bad(key, value, e))
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    S,
    M,
    L,
}

impl Preset {
    pub fn channels(self) -> [Triple; 11] {
        match self {
            Preset::S => [
                (3, 4, 8), (8, 4, 8), (8, 4, 8), (8, 4, 8), (8, 4, 8),
                (8, 4, 8), (16, 4, 8), (16, 4, 8), (16, 4, 8), (16, 4, 8), (16, 4, 8),
            ],
            Preset::M => [
                (3, 16, 64), (64, 16, 64), (64, 16, 64), (64, 16, 64), (64, 16, 64),
                (64, 16, 64), (128, 16, 64), (128, 16, 64), (128, 16, 64), (128, 16, 64), (128, 16, 64),
            ],
            Preset::L => [
                (3, 16, 64), (64, 16, 64), (64, 32, 64), (64, 32, 128), (128, 32, 128),
                (128, 64, 128), (256, 64, 128), (256, 32, 64), (128, 32, 64), (128, 16, 64), (128, 16, 64),
            ],
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().trim_start_matches("ILNET-") {
            "S" => Ok(Preset::S),
            "M" => Ok(Preset::M),
            "L" => Ok(Preset::L),
            other => Err(format!("expected S, M or L, got `{other}`")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::S => "S",
            Preset::M => "M",
            Preset::L => "L",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: Preset,
    pub stage_channels: [Triple; 11],
    /// DODA non-linearity factor.
    pub n: u32,
    /// DODA offset.
    pub b: u32,
    /// Side-head channel scale.
    pub t: f64,
    /// Encoder stages fused with IPOF, kept deepest-first.
    pub num_ipof_stages: usize,
    /// When false the side maps are fused by a plain 1×1 conv over the
    /// supervision logits.
    pub use_rb: bool,
    pub input_size: (usize, usize),
    pub seed: u64,
}

impl ModelConfig {
    pub fn preset(name: Preset) -> Self {
        ModelConfig {
            name,
            stage_channels: name.channels(),
            n: 2,
            b: 2,
            t: 1.0,
            num_ipof_stages: 5,
            use_rb: true,
            input_size: (64, 64),
            seed: 0,
        }
    }

    pub fn small() -> Self {
        Self::preset(Preset::S)
    }

    pub fn encoder(&self, i: usize) -> Triple {
        self.stage_channels[i]
    }

    /// Decoder `k` in side order: 0 is decoder4 (the bridge), 5 is decoder_out.
    pub fn decoder(&self, k: usize) -> Triple {
        self.stage_channels[5 + k]
    }

    /// Whether IPOF is applied at encoder stage `i`.
    pub fn ipof_enabled(&self, i: usize) -> bool {
        i < 5 && i + self.num_ipof_stages >= 5
    }

    /// Applies one `key=value` pair. Returns `Ok(false)` for keys this config
    /// does not own so callers can route them elsewhere.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        match key {
            "name" => {
                let p: Preset = value.parse().map_err(|e: String| bad(key, value, e))?;
                self.name = p;
                self.stage_channels = p.channels();
            }
            "stage_channels" => self.stage_channels = parse_triples(value)?,
            "n" => self.n = parse_value(key, value)?,
            "b" => self.b = parse_value(key, value)?,
            "t" => self.t = parse_value(key, value)?,
            "num_ipof_stages" => self.num_ipof_stages = parse_value(key, value)?,
            "rb" => self.use_rb = parse_value(key, value)?,
            "input_size" => self.input_size = parse_size(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::small();
        for (k, v) in parse_kv_lines(text)? {
            if !cfg.set(&k, &v)? {
                return Err(ConfigError::UnknownKey(k));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let triples: Vec<String> = self.stage_channels.iter().map(|(a, b, c)| format!("({a},{b},{c})")).collect();
        format!(
            "name={}\nstage_channels={}\nn={}\nb={}\nt={}\nnum_ipof_stages={}\nrb={}\ninput_size={},{}\nseed={}\n",
            self.name,
            triples.join(","),
            self.n,
            self.b,
            self.t,
            self.num_ipof_stages,
            self.use_rb,
            self.input_size.0,
            self.input_size.1,
            self.seed
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        if self.n == 0 || self.b == 0 {
            return inv("n and b must be positive".into());
        }
        if !(self.t > 0.0 && self.t < 3.0) {
            return inv(format!("t = {} outside (0, 3)", self.t));
        }
        if self.num_ipof_stages > 5 {
            return inv(format!("num_ipof_stages = {} > 5", self.num_ipof_stages));
        }
        let (h, w) = self.input_size;
        if h < MIN_INPUT || w < MIN_INPUT || h % 16 != 0 || w % 16 != 0 {
            return inv(format!("input size {h}x{w} must be multiples of 16 and at least {MIN_INPUT}"));
        }
        let ch = &self.stage_channels;
        if ch.iter().any(|&(a, m, c)| a == 0 || m == 0 || c == 0) {
            return inv("channel counts must be positive".into());
        }
        for i in 1..5 {
            if ch[i].0 != ch[i - 1].2 {
                return inv(format!("{} input {} != {} output {}", STAGE_NAMES[i], ch[i].0, STAGE_NAMES[i - 1], ch[i - 1].2));
            }
        }
        if ch[5].0 != ch[4].2 {
            return inv(format!("decoder4 input {} != encoder4 output {}", ch[5].0, ch[4].2));
        }
        // decoder at slot 5+k fuses encoder 5-k with the decoder above it
        for k in 1..6 {
            let (enc, prev, dec) = (ch[5 - k], ch[4 + k], ch[5 + k]);
            if prev.2 != enc.2 {
                return inv(format!("{} output {} must match {} output {}", STAGE_NAMES[4 + k], prev.2, STAGE_NAMES[5 - k], enc.2));
            }
            if dec.0 != prev.2 + enc.2 {
                return inv(format!("{} input {} != {} + {}", STAGE_NAMES[5 + k], dec.0, prev.2, enc.2));
            }
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::small()
    }
}

fn parse_triples(value: &str) -> Result<[Triple; 11], ConfigError> {
    let nums: Vec<usize> = value
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| bad("stage_channels", value, e)))
        .collect::<Result<_, _>>()?;
    if nums.len() != 33 {
        return Err(bad("stage_channels", value, format!("expected 11 triples (33 integers), got {}", nums.len())));
    }
    let mut out = [(0, 0, 0); 11];
    for (slot, c) in out.iter_mut().zip(nums.chunks(3)) {
        *slot = (c[0], c[1], c[2]);
    }
    Ok(out)
}

pub(crate) fn parse_size(key: &str, value: &str) -> Result<(usize, usize), ConfigError> {
    let parts: Vec<&str> = value.split([',', 'x', 'X', ' ']).filter(|s| !s.is_empty()).collect();
    match parts.as_slice() {
        [s] => {
            let v = parse_value(key, s)?;
            Ok((v, v))
        }
        [h, w] => Ok((parse_value(key, h)?, parse_value(key, w)?)),
        _ => Err(bad(key, value, "expected H,W")),
    }
}
