use std::sync::OnceLock;

use regex::Regex;

/// Loss charged when a side has no extractable number.
pub const MISS_PENALTY: f64 = 1e6;

pub const DEFAULT_SC_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtractMode {
    First,
    #[default]
    Last,
}

pub(crate) fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?").unwrap())
}

pub fn extract_numeric_with(text: &str, mode: ExtractMode) -> Option<f64> {
    let mut matches = number_regex().find_iter(text);
    let m = match mode {
        ExtractMode::First => matches.next(),
        ExtractMode::Last => matches.last(),
    }?;
    m.as_str().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// The last signed decimal in `text`.
pub fn extract_numeric(text: &str) -> Option<f64> {
    extract_numeric_with(text, ExtractMode::Last)
}

pub fn numeric_loss(pred: &str, truth: &str) -> f64 {
    match (extract_numeric(pred), extract_numeric(truth)) {
        (Some(a), Some(b)) => (a - b).powi(2),
        _ => MISS_PENALTY,
    }
}

/// Normalised variance of the numbers extracted from `samples`.
/// Samples without a number are dropped.
pub fn self_consistency_loss<S: AsRef<str>>(samples: &[S], eps: f64) -> f64 {
    let values: Vec<f64> = samples.iter().filter_map(|s| extract_numeric(s.as_ref())).collect();
    if values.is_empty() {
        return MISS_PENALTY;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var / (mean * mean + eps)
}
