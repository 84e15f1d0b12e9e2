//! Run reports: phase timings, evaluation counts and final metrics.

use std::collections::BTreeMap;
use std::time::Instant;

use autoint::gradnet::AutoIntPair;
use autoint::graph::evaluate;
use ndarray::Array2;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    /// Contiguous, so they sum to `total_seconds`.
    pub phases: Vec<Phase>,
    pub total_seconds: f64,
    /// Integral-network row evaluations spent on integrals.
    pub integral_evals: u64,
    /// Grad-network nodes computed per forward pass with leg reuse.
    pub unique_node_evals: usize,
    /// Grad-network nodes a schedule without reuse computes.
    pub total_node_refs: usize,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip)]
    start: Option<Instant>,
    #[serde(skip)]
    last: Option<Instant>,
}

impl RunReport {
    pub fn start(command: &str) -> Self {
        let now = Instant::now();
        RunReport {
            command: command.to_string(),
            phases: Vec::new(),
            total_seconds: 0.0,
            integral_evals: 0,
            unique_node_evals: 0,
            total_node_refs: 0,
            metrics: BTreeMap::new(),
            start: Some(now),
            last: Some(now),
        }
    }

    /// Closes the phase that began at the previous mark.
    pub fn mark(&mut self, name: &str) {
        let now = Instant::now();
        let since = self.last.map_or(0.0, |t| (now - t).as_secs_f64());
        self.phases.push(Phase {
            name: name.to_string(),
            seconds: since,
        });
        self.last = Some(now);
    }

    pub fn finish(mut self) -> Self {
        if let (Some(s), Some(l)) = (self.start, self.last) {
            self.total_seconds = (l - s).as_secs_f64();
        }
        self
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    /// Adds the reuse counters of one grad-network forward pass.
    pub fn add_reuse(&mut self, pair: &AutoIntPair) -> Result<(), CliError> {
        let inputs: Vec<Array2<f64>> = pair
            .grad
            .signature()
            .iter()
            .map(|s| Array2::zeros((1, s.width)))
            .collect();
        let rep = evaluate(&pair.grad, &inputs, &pair.params, true)?;
        self.unique_node_evals += rep.unique_node_evals;
        self.total_node_refs += rep.total_node_refs;
        Ok(())
    }

    /// Deterministic part of the report (no timings), written as an artifact.
    pub fn metrics_json(&self) -> String {
        #[derive(Serialize)]
        struct Stable<'a> {
            command: &'a str,
            integral_evals: u64,
            unique_node_evals: usize,
            total_node_refs: usize,
            metrics: &'a BTreeMap<String, f64>,
        }
        let s = Stable {
            command: &self.command,
            integral_evals: self.integral_evals,
            unique_node_evals: self.unique_node_evals,
            total_node_refs: self.total_node_refs,
            metrics: &self.metrics,
        };
        serde_json::to_string_pretty(&s).expect("plain data serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_sum_to_total() {
        let mut r = RunReport::start("x");
        std::thread::sleep(std::time::Duration::from_millis(5));
        r.mark("a");
        std::thread::sleep(std::time::Duration::from_millis(3));
        r.mark("b");
        let r = r.finish();
        let sum: f64 = r.phases.iter().map(|p| p.seconds).sum();
        assert!((sum - r.total_seconds).abs() <= 0.01 * r.total_seconds);
        assert!(!r.metrics_json().contains("seconds"));
    }
}
