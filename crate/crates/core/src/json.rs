//! JSON number formatting shared by every emitted document.
//!
//! Floats are written with 17 significant digits in scientific notation so a
//! written file reloads to the identical bit pattern and two runs with the same
//! inputs produce byte-identical output.

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

/// An `f64` that serializes with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sig17(pub f64);

pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        // JSON has no representation for these.
        "null".to_string()
    }
}

impl Serialize for Sig17 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(format_f64(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

pub fn vec17(values: &[f64]) -> Vec<Sig17> {
    values.iter().copied().map(Sig17).collect()
}
