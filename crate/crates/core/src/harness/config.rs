//! Flat `key = value` configuration files.
//!
//! Lines are trimmed; blank lines and `#` comments are skipped. Missing keys
//! keep their defaults, unknown keys are rejected. Every key can also be set
//! from the environment as `VPS_<KEY>` (upper-cased), which wins over the
//! file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::config::{BuilderKind, VpsConfig};
use crate::error::{Result, VpsError};
use crate::model::{DecodeMode, ModelConfig, PROJ_NAMES};
use crate::verify::Weights;

pub const ENV_PREFIX: &str = "VPS_";

pub const KEYS: &[&str] = &[
    "rank",
    "topk",
    "gamma",
    "tau",
    "builder",
    "order",
    "qk_coupling",
    "lbfgs_enabled",
    "adaptive_rank",
    "adaptive_gamma",
    "alpha",
    "rank_bounds",
    "gamma_bounds",
    "topk_bounds",
    "clamp",
    "entropy_divisor",
    "window_size",
    "seed",
    "weight_numeric",
    "weight_unit",
    "weight_algebraic",
    "weight_self_consistency",
    "sc_samples",
    "sc_temperature",
    "vocab_size",
    "d_model",
    "n_heads",
    "n_layers",
    "d_ff",
    "max_seq",
    "iterations",
    "train_steps",
    "train_lr",
    "num_prompts",
    "max_new_tokens",
    "decode",
    "target_layers",
    "confidence_filter",
    "filter_fraction",
    "output",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub vps: VpsConfig,
    pub seed: u64,
    pub iterations: usize,
    pub train_steps: usize,
    pub train_lr: f64,
    pub num_prompts: usize,
    pub max_new_tokens: usize,
    #[serde(serialize_with = "ser_decode")]
    pub decode: DecodeMode,
    pub target_layers: Vec<String>,
    pub confidence_filter: bool,
    pub filter_fraction: f64,
    /// Extra temperature samples per iteration for the self-consistency
    /// objective; 0 disables it.
    pub sc_samples: usize,
    pub sc_temperature: f64,
    pub output: PathBuf,
}

fn ser_decode<S: serde::Serializer>(d: &DecodeMode, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&decode_to_string(*d))
}

pub fn decode_to_string(d: DecodeMode) -> String {
    match d {
        DecodeMode::Greedy => "greedy".into(),
        DecodeMode::Temperature(t) => format!("temperature:{t}"),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            vps: VpsConfig::default(),
            seed: 0,
            iterations: 3,
            train_steps: 300,
            train_lr: 0.5,
            num_prompts: 10,
            max_new_tokens: 3,
            decode: DecodeMode::Greedy,
            target_layers: PROJ_NAMES.iter().map(|s| s.to_string()).collect(),
            confidence_filter: false,
            filter_fraction: 0.5,
            sc_samples: 0,
            sc_temperature: 0.7,
            output: PathBuf::from("vps_results.tsv"),
        }
    }
}

impl ExperimentConfig {
    /// Propagates the shared seed and checks every section.
    pub fn finalize(mut self) -> Result<Self> {
        self.model.seed = self.seed;
        self.vps.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VpsError::Argument(m));
        self.model.validate()?;
        self.vps.validate()?;
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.num_prompts == 0 || self.max_new_tokens == 0 {
            return bad("num_prompts and max_new_tokens must be >= 1".into());
        }
        if !(self.filter_fraction > 0.0 && self.filter_fraction <= 1.0) {
            return bad(format!("filter_fraction {} outside (0, 1]", self.filter_fraction));
        }
        if !(self.sc_temperature > 0.0) {
            return bad(format!("sc_temperature must be positive, got {}", self.sc_temperature));
        }
        if !(self.train_lr > 0.0) {
            return bad(format!("train_lr must be positive, got {}", self.train_lr));
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim().trim_matches('"');
        match key {
            "rank" => self.vps.rank = parse(v)?,
            "topk" => self.vps.topk = parse(v)?,
            "gamma" => self.vps.gamma = parse(v)?,
            "tau" => self.vps.tau = parse(v)?,
            "builder" => self.vps.builder = v.parse::<BuilderKind>().map_err(|e| e.to_string())?,
            "order" => {
                let order: usize = parse(v)?;
                if order != 1 {
                    return Err(format!("order = {order} is unsupported; only first-order deltas exist"));
                }
                self.vps.order = order;
            }
            "qk_coupling" => self.vps.qk_coupling = parse_bool(v)?,
            "lbfgs_enabled" => {
                self.vps.lbfgs_enabled = parse_bool(v)?;
                log::warn!("lbfgs_enabled is accepted but ignored: there is no L-BFGS stage");
            }
            "adaptive_rank" => self.vps.adaptive_rank = parse_bool(v)?,
            "adaptive_gamma" => self.vps.adaptive_gamma = parse_bool(v)?,
            "alpha" => self.vps.alpha = parse(v)?,
            "rank_bounds" => self.vps.rank_bounds = parse_pair(v)?,
            "gamma_bounds" => self.vps.gamma_bounds = parse_pair(v)?,
            "topk_bounds" => self.vps.topk_bounds = parse_pair(v)?,
            "clamp" => {
                self.vps.clamp = match v {
                    "none" | "" => None,
                    _ => Some(parse(v)?),
                }
            }
            "entropy_divisor" => self.vps.entropy_divisor = parse(v)?,
            "window_size" => self.vps.window_size = parse(v)?,
            "seed" => self.seed = parse(v)?,
            "weight_numeric" => self.vps.weights.numeric = parse(v)?,
            "weight_unit" => self.vps.weights.unit = parse(v)?,
            "weight_algebraic" => self.vps.weights.algebraic = parse(v)?,
            "weight_self_consistency" => self.vps.weights.self_consistency = parse(v)?,
            "sc_samples" => self.sc_samples = parse(v)?,
            "sc_temperature" => self.sc_temperature = parse(v)?,
            "vocab_size" => self.model.vocab_size = parse(v)?,
            "d_model" => self.model.d_model = parse(v)?,
            "n_heads" => self.model.n_heads = parse(v)?,
            "n_layers" => self.model.n_layers = parse(v)?,
            "d_ff" => self.model.d_ff = parse(v)?,
            "max_seq" => self.model.max_seq = parse(v)?,
            "iterations" => self.iterations = parse(v)?,
            "train_steps" => self.train_steps = parse(v)?,
            "train_lr" => self.train_lr = parse(v)?,
            "num_prompts" => self.num_prompts = parse(v)?,
            "max_new_tokens" => self.max_new_tokens = parse(v)?,
            "decode" => self.decode = parse_decode(v)?,
            "target_layers" => {
                self.target_layers = v
                    .trim_matches(|c| c == '[' || c == ']')
                    .split(',')
                    .map(|s| s.trim().trim_matches('"').to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "confidence_filter" => self.confidence_filter = parse_bool(v)?,
            "filter_fraction" => self.filter_fraction = parse(v)?,
            "output" => self.output = PathBuf::from(v),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("cannot parse '{v}' as {}", std::any::type_name::<T>()))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("cannot parse '{v}' as a flag")),
    }
}

/// `[lo, hi]`, `lo, hi` or `lo hi`; `lo <= hi` is required.
fn parse_pair<T: FromStr + PartialOrd + Copy>(v: &str) -> std::result::Result<(T, T), String> {
    let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
    let parts: Vec<&str> = inner
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    let [lo, hi] = parts[..] else {
        return Err(format!("expected two values in '{v}'"));
    };
    let (lo, hi) = (parse::<T>(lo)?, parse::<T>(hi)?);
    if lo > hi {
        return Err(format!("bounds '{v}' have lo > hi"));
    }
    Ok((lo, hi))
}

fn parse_decode(v: &str) -> std::result::Result<DecodeMode, String> {
    if v == "greedy" {
        return Ok(DecodeMode::Greedy);
    }
    match v.strip_prefix("temperature:") {
        Some(t) => {
            let t: f64 = parse(t)?;
            if t > 0.0 {
                Ok(DecodeMode::Temperature(t))
            } else {
                Err(format!("temperature must be positive, got {t}"))
            }
        }
        None => Err(format!("decode must be 'greedy' or 'temperature:<T>', got '{v}'")),
    }
}

/// Parses config text on top of the defaults. Does not read the environment.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| VpsError::Config { line: i + 1, msg };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
        cfg.set(key.trim(), value).map_err(err)?;
    }
    Ok(cfg)
}

/// Applies `VPS_<KEY>` overrides from `vars`. Unrelated variables are
/// ignored; unknown keys behind the prefix are errors.
pub fn apply_env_overrides<I>(cfg: &mut ExperimentConfig, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (name, value) in vars {
        let key = name[ENV_PREFIX.len()..].to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            return Err(VpsError::Argument(format!("environment variable {name} names no config key")));
        }
        cfg.set(&key, &value)
            .map_err(|m| VpsError::Argument(format!("environment variable {name}: {m}")))?;
    }
    Ok(())
}

/// Reads `path` (if given), then the process environment, then validates.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => parse_config_str(&fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    apply_env_overrides(&mut cfg, std::env::vars())?;
    cfg.finalize()
}

/// The default config rendered in the file format, one key per line.
pub fn render_defaults() -> String {
    let c = ExperimentConfig::default();
    let v = &c.vps;
    let w: Weights = v.weights;
    let b = |x: bool| if x { "true" } else { "false" };
    let lines = [
        format!("rank = {}", v.rank),
        format!("topk = {}", v.topk),
        format!("gamma = {}", v.gamma),
        format!("tau = {}", v.tau),
        format!("builder = {}", v.builder),
        format!("order = {}", v.order),
        format!("qk_coupling = {}", b(v.qk_coupling)),
        format!("adaptive_rank = {}", b(v.adaptive_rank)),
        format!("adaptive_gamma = {}", b(v.adaptive_gamma)),
        format!("alpha = {}", v.alpha),
        format!("rank_bounds = [{}, {}]", v.rank_bounds.0, v.rank_bounds.1),
        format!("gamma_bounds = [{}, {}]", v.gamma_bounds.0, v.gamma_bounds.1),
        format!("topk_bounds = [{}, {}]", v.topk_bounds.0, v.topk_bounds.1),
        "clamp = none".to_string(),
        format!("entropy_divisor = {}", v.entropy_divisor),
        format!("window_size = {}", v.window_size),
        format!("seed = {}", c.seed),
        format!("weight_numeric = {}", w.numeric),
        format!("weight_unit = {}", w.unit),
        format!("weight_algebraic = {}", w.algebraic),
        format!("weight_self_consistency = {}", w.self_consistency),
        format!("sc_samples = {}", c.sc_samples),
        format!("sc_temperature = {}", c.sc_temperature),
        format!("vocab_size = {}", c.model.vocab_size),
        format!("d_model = {}", c.model.d_model),
        format!("n_heads = {}", c.model.n_heads),
        format!("n_layers = {}", c.model.n_layers),
        format!("d_ff = {}", c.model.d_ff),
        format!("max_seq = {}", c.model.max_seq),
        format!("iterations = {}", c.iterations),
        format!("train_steps = {}", c.train_steps),
        format!("train_lr = {}", c.train_lr),
        format!("num_prompts = {}", c.num_prompts),
        format!("max_new_tokens = {}", c.max_new_tokens),
        format!("decode = {}", decode_to_string(c.decode)),
        format!("target_layers = {}", c.target_layers.join(", ")),
        format!("confidence_filter = {}", b(c.confidence_filter)),
        format!("filter_fraction = {}", c.filter_fraction),
        format!("output = {}", c.output.display()),
    ];
    let mut out = lines.join("\n");
    out.push('\n');
    out
}
