use super::{CorrelationResult, TestResult};
use serde::{Deserialize, Serialize};

/// Spearman correlation of one (target, channel) pair against frequency, or
/// of two channels against each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub target: String,
    pub x: String,
    pub y: String,
    #[serde(flatten)]
    pub result: CorrelationResult,
}

/// One-sample test of a (target, channel) induced value against zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTest {
    pub target: String,
    pub channel: String,
    pub mean: f64,
    #[serde(flatten)]
    pub result: TestResult,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub correlations: Vec<CorrelationEntry>,
    pub group_tests: Vec<GroupTest>,
}

impl StatsReport {
    pub fn correlation(&self, target: &str, x: &str, y: &str) -> Option<&CorrelationEntry> {
        self.correlations.iter().find(|c| c.target == target && c.x == x && c.y == y)
    }

    pub fn group_test(&self, target: &str, channel: &str) -> Option<&GroupTest> {
        self.group_tests.iter().find(|g| g.target == target && g.channel == channel)
    }
}
