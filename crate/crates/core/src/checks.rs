/// A named numerical diagnostic together with the threshold it was held to.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    /// Passes when `value <= bound`.
    pub fn le(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= bound,
            value,
            tolerance: bound,
        }
    }

    /// Passes when `value >= bound`.
    pub fn ge(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            passed: value >= bound,
            value,
            tolerance: bound,
        }
    }

    /// Exact equality of counts, encoded as a zero-tolerance check.
    pub fn count(name: impl Into<String>, found: usize, expected: usize) -> Self {
        Self {
            name: name.into(),
            passed: found == expected,
            value: found as f64 - expected as f64,
            tolerance: 0.0,
        }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}
