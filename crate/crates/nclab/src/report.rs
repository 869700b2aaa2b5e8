//! Structured results. Maps are ordered so serialization is byte-stable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// measured <= tolerance
    AtMost,
    /// measured >= tolerance
    AtLeast,
    /// boolean verdict; measured is 1 or 0
    Holds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            comparison: Comparison::AtMost,
            passed: measured <= tolerance,
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            comparison: Comparison::AtLeast,
            passed: measured >= tolerance,
        }
    }

    pub fn holds(name: impl Into<String>, verdict: bool) -> Self {
        Self {
            name: name.into(),
            measured: if verdict { 1.0 } else { 0.0 },
            tolerance: 1.0,
            comparison: Comparison::Holds,
            passed: verdict,
        }
    }
}

/// A reported value with the tolerance it was judged against, if any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub config: Value,
    pub results: BTreeMap<String, Quantity>,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<BTreeMap<String, f64>>,
}

impl Report {
    pub fn new(command: impl Into<String>) -> Self {
        Self { command: command.into(), config: Value::Null, ..Default::default() }
    }

    pub fn put(&mut self, key: impl Into<String>, value: impl Serialize) -> &mut Self {
        let value = serde_json::to_value(value).unwrap_or(Value::Null);
        self.results.insert(key.into(), Quantity { value, tolerance: None });
        self
    }

    pub fn put_tol(&mut self, key: impl Into<String>, value: impl Serialize, tol: f64) -> &mut Self {
        let value = serde_json::to_value(value).unwrap_or(Value::Null);
        self.results.insert(key.into(), Quantity { value, tolerance: Some(tol) });
        self
    }

    pub fn check(&mut self, c: Check) -> &mut Self {
        self.checks.push(c);
        self
    }

    pub fn note(&mut self, s: impl Into<String>) -> &mut Self {
        self.notes.push(s.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.results.get(key).and_then(|q| q.value.as_f64())
    }

    /// Fold another report's results and checks in under a prefix.
    pub fn absorb(&mut self, prefix: &str, other: Report) -> &mut Self {
        for (k, v) in other.results {
            self.results.insert(format!("{prefix}.{k}"), v);
        }
        for mut c in other.checks {
            c.name = format!("{prefix}.{}", c.name);
            self.checks.push(c);
        }
        self.notes.extend(other.notes);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        let mut r = Report::new("t");
        r.check(Check::at_most("a", 1e-12, 1e-10)).check(Check::at_least("b", 0.5, 0.9));
        assert!(!r.passed());
        assert_eq!(r.failures()[0].name, "b");
    }

    #[test]
    fn json_is_stable() {
        let mut r = Report::new("t");
        r.put("z", 1.0).put("a", vec![1, 2]).put_tol("m", 0.1, 1.0);
        assert_eq!(r.to_json(), r.clone().to_json());
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
