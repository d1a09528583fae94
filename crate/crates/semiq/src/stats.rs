use crate::config::ExperimentConfig;
use serde::{Deserialize, Serialize};

/// Width of every Monte Carlo gate, in standard deviations.
pub const GATE_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub hits: u64,
    pub trials: u64,
}

impl Tally {
    pub fn new(hits: u64, trials: u64) -> Self {
        Self { hits, trials }
    }

    pub fn count<I: IntoIterator<Item = bool>>(outcomes: I) -> Self {
        outcomes.into_iter().fold(Self::default(), |mut t, hit| {
            t.trials += 1;
            t.hits += u64::from(hit);
            t
        })
    }

    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.hits as f64 / self.trials as f64
        }
    }
}

/// Binomial standard deviation of a rate estimated from `n` trials.
pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Gate {
    /// Rate within the gate of `bound` on either side.
    TwoSided,
    /// Rate at most `bound` plus the gate.
    AtMost,
    /// Rate at least `bound` minus the gate.
    AtLeast,
    /// Rate at most `bound`, with no statistical allowance.
    Cap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatReport {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub empirical_rate: f64,
    pub bound: f64,
    pub sigma: f64,
    pub pass: bool,
}

impl StatReport {
    /// `slack` absorbs analytic corrections the binomial model leaves out.
    pub fn gate(experiment: &str, config: &ExperimentConfig, tally: Tally, gate: Gate, bound: f64, slack: f64) -> Self {
        let rate = tally.rate();
        let sigma = binomial_sigma(bound.clamp(0.0, 1.0), tally.trials);
        let width = GATE_SIGMAS * sigma + slack;
        let pass = tally.trials > 0
            && match gate {
                Gate::TwoSided => (rate - bound).abs() <= width,
                Gate::AtMost => rate <= bound + width,
                Gate::AtLeast => rate >= bound - width,
                Gate::Cap => rate <= bound + slack,
            };
        Self {
            experiment: experiment.to_string(),
            config: config.clone(),
            empirical_rate: rate,
            bound,
            sigma,
            pass,
        }
    }

    /// Pass only if every extra structural check held too.
    pub fn and(mut self, ok: bool) -> Self {
        self.pass &= ok;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gates() {
        let c = ExperimentConfig::default();
        let t = Tally::new(6_050, 10_000);
        assert!(StatReport::gate("x", &c, t, Gate::TwoSided, 0.6, 0.0).pass);
        assert!(!StatReport::gate("x", &c, Tally::new(6_200, 10_000), Gate::TwoSided, 0.6, 0.0).pass);
        assert!(StatReport::gate("x", &c, Tally::new(1_050, 10_000), Gate::AtMost, 0.1, 0.0).pass);
        assert!(!StatReport::gate("x", &c, Tally::new(1_100, 10_000), Gate::AtMost, 0.1, 0.0).pass);
        assert!(StatReport::gate("x", &c, Tally::new(9_990, 10_000), Gate::AtLeast, 0.999, 0.0).pass);
        assert!(StatReport::gate("x", &c, Tally::new(10, 10), Gate::TwoSided, 1.0, 0.0).pass);
        assert!(!StatReport::gate("x", &c, Tally::default(), Gate::AtMost, 1.0, 0.0).pass);
        assert!(StatReport::gate("x", &c, Tally::new(520, 1_000), Gate::Cap, 0.52, 0.0).pass);
        assert!(!StatReport::gate("x", &c, Tally::new(521, 1_000), Gate::Cap, 0.52, 0.0).pass);
    }

    #[test]
    fn sigma_matches_closed_form() {
        assert!((binomial_sigma(0.6, 10_000) - 0.004_898_979).abs() < 1e-9);
        assert_eq!(binomial_sigma(1.0, 100), 0.0);
    }

    #[test]
    fn json_schema() {
        let r = StatReport::gate("tok-correctness", &ExperimentConfig::default(), Tally::new(3, 4), Gate::AtLeast, 0.5, 0.0);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["bound", "config", "empiricalRate", "experiment", "pass", "sigma"]);
        assert_eq!(v["empiricalRate"], 0.75);
    }
}
