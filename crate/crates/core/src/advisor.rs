//! Layer-freezing advice from the diagonal similarity between a model and its
//! finetuned counterpart.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub const CAVEAT: &str = "The threshold is a descriptive cutoff for where layers changed during \
finetuning, not a calibrated predictor of recognition accuracy.";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreezeReport {
    pub similarity: Vec<f64>,
    pub threshold: f64,
    /// Layers `1..=freeze_prefix` are all at or above the threshold.
    pub freeze_prefix: usize,
    /// 1-based indices of layers below the threshold.
    pub changed_layers: Vec<usize>,
    pub caveat: &'static str,
}

/// Recommends freezing the longest bottom prefix of layers whose similarity
/// stays at or above `threshold`.
pub fn advise(diagonal: &[f64], threshold: f64) -> Result<FreezeReport> {
    if diagonal.is_empty() {
        return Err(Error::InvalidArgument("similarity vector is empty".into()));
    }
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold must be finite, got {threshold}")));
    }
    if let Some(l) = diagonal.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite similarity at layer {}", l + 1)));
    }
    let freeze_prefix = diagonal.iter().take_while(|&&v| v >= threshold).count();
    let changed_layers = diagonal
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < threshold)
        .map(|(l, _)| l + 1)
        .collect();
    Ok(FreezeReport { similarity: diagonal.to_vec(), threshold, freeze_prefix, changed_layers, caveat: CAVEAT })
}

impl FreezeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for FreezeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.similarity.len();
        writeln!(f, "threshold: {}", self.threshold)?;
        match self.freeze_prefix {
            0 => writeln!(f, "freeze: none (layer 1 is below the threshold)")?,
            k if k == n => writeln!(f, "freeze: all {n} layers")?,
            k => writeln!(f, "freeze: layers 1-{k} of {n}")?,
        }
        for (l, v) in self.similarity.iter().enumerate() {
            let mark = if *v < self.threshold { "  changed" } else { "" };
            writeln!(f, "  layer {:>3}  {v:.4}{mark}", l + 1)?;
        }
        write!(f, "note: {}", self.caveat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_layers_changed() {
        let mut d = vec![0.9; 16];
        d.extend([0.3; 8]);
        let r = advise(&d, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.freeze_prefix, 16);
        assert_eq!(r.changed_layers, (17..=24).collect::<Vec<_>>());
    }

    #[test]
    fn prefix_semantics() {
        let r = advise(&[0.4, 0.9, 0.9], 0.5).unwrap();
        assert_eq!(r.freeze_prefix, 0);
        assert_eq!(r.changed_layers, vec![1]);
        let r = advise(&[0.6, 0.5, 0.7], 0.5).unwrap();
        assert_eq!(r.freeze_prefix, 3);
        assert!(r.changed_layers.is_empty());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(advise(&[], 0.5).is_err());
        assert!(matches!(advise(&[0.5, f64::NAN], 0.5), Err(Error::Numerical(_))));
        assert!(advise(&[0.5], f64::NAN).is_err());
    }

    #[test]
    fn renders() {
        let r = advise(&[0.9, 0.2], 0.5).unwrap();
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["freeze_prefix"], 1);
        assert!(r.to_string().contains("layers 1-1 of 2"));
    }
}
