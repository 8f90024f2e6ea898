//! Per-call token and dollar accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Which part of an experiment a call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Gameplay,
    Evaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Complete,
    Probe,
    Embed,
}

/// Prices in dollars per 1,000 tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitPrices {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl UnitPrices {
    pub fn dollars(&self, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        prompt_tokens as f64 * self.input_per_1k / 1000.0
            + completion_tokens as f64 * self.output_per_1k / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub backend: String,
    pub phase: Phase,
    pub kind: CallKind,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub prices: UnitPrices,
    pub dollars: f64,
    /// Backend-reported time in seconds.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub dollars: f64,
    pub wall_time: f64,
}

impl Totals {
    fn add(&mut self, r: &CostRecord) {
        self.calls += 1;
        self.prompt_tokens += r.prompt_tokens;
        self.completion_tokens += r.completion_tokens;
        self.dollars += r.dollars;
        self.wall_time += r.wall_time;
    }

    pub fn of<'a>(records: impl IntoIterator<Item = &'a CostRecord>) -> Self {
        let mut t = Totals::default();
        for r in records {
            t.add(r);
        }
        t
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CostLedger {
    records: Vec<CostRecord>,
}

impl CostLedger {
    pub fn push(&mut self, record: CostRecord) -> usize {
        self.records.push(record);
        self.records.len() - 1
    }

    pub fn records(&self) -> &[CostRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn totals(&self) -> Totals {
        Totals::of(&self.records)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub total: Totals,
    pub by_phase: BTreeMap<Phase, Totals>,
    pub by_backend: BTreeMap<String, Totals>,
}

impl CostReport {
    /// Rows of `(scope, calls, prompt tokens, completion tokens, dollars, hours)`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>14} {:>14} {:>12} {:>10}",
            "scope", "calls", "prompt_tok", "completion_tok", "dollars", "hours"
        );
        let mut row = |name: &str, t: &Totals| {
            let _ = writeln!(
                out,
                "{:<24} {:>8} {:>14} {:>14} {:>12.4} {:>10.4}",
                name,
                t.calls,
                t.prompt_tokens,
                t.completion_tokens,
                t.dollars,
                t.wall_time / 3600.0
            );
        };
        for (phase, t) in &self.by_phase {
            row(&format!("phase:{}", phase_name(*phase)), t);
        }
        for (backend, t) in &self.by_backend {
            row(&format!("backend:{backend}"), t);
        }
        row("total", &self.total);
        out
    }
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Gameplay => "gameplay",
        Phase::Evaluation => "evaluation",
    }
}

/// Totals over the records matching `phase` (all records for `None`).
pub fn report_costs(ledger: &CostLedger, phase: Option<Phase>) -> CostReport {
    let mut report = CostReport::default();
    for r in ledger.records().iter().filter(|r| phase.is_none_or(|p| r.phase == p)) {
        report.total.add(r);
        report.by_phase.entry(r.phase).or_default().add(r);
        report.by_backend.entry(r.backend.clone()).or_default().add(r);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(phase: Phase, p: u64, c: u64) -> CostRecord {
        let prices = UnitPrices { input_per_1k: 0.001, output_per_1k: 0.002 };
        CostRecord {
            backend: "remote".into(),
            phase,
            kind: CallKind::Complete,
            prompt_tokens: p,
            completion_tokens: c,
            prices,
            dollars: prices.dollars(p, c),
            wall_time: 1.5,
        }
    }

    #[test]
    fn two_calls_cost() {
        let mut ledger = CostLedger::default();
        ledger.push(record(Phase::Gameplay, 100, 50));
        ledger.push(record(Phase::Gameplay, 100, 50));
        let report = report_costs(&ledger, None);
        // 2 x (100 * 1e-6 + 50 * 2e-6)
        assert!((report.total.dollars - 0.0004).abs() < 1e-15);
        assert_eq!(report.total.calls, 2);
        assert!(report.to_table().contains("total"));
    }

    #[test]
    fn empty_ledger_is_zero() {
        let report = report_costs(&CostLedger::default(), None);
        assert_eq!(report.total, Totals::default());
    }

    #[test]
    fn phase_filter() {
        let mut ledger = CostLedger::default();
        ledger.push(record(Phase::Gameplay, 1000, 0));
        ledger.push(record(Phase::Evaluation, 10, 20));
        let report = report_costs(&ledger, Some(Phase::Evaluation));
        assert_eq!(report.total.calls, 1);
        assert_eq!(report.total.prompt_tokens, 10);
        assert!(!report.by_phase.contains_key(&Phase::Gameplay));
    }

    #[test]
    fn totals_resum_records() {
        let mut ledger = CostLedger::default();
        for i in 0..20 {
            ledger.push(record(if i % 2 == 0 { Phase::Gameplay } else { Phase::Evaluation }, i * 7, i * 3));
        }
        let manual: f64 = ledger.records().iter().map(|r| r.dollars).sum();
        assert!((ledger.totals().dollars - manual).abs() < 1e-15);
        let split = report_costs(&ledger, Some(Phase::Gameplay)).total.dollars
            + report_costs(&ledger, Some(Phase::Evaluation)).total.dollars;
        assert!((split - manual).abs() < 1e-12);
    }
}
