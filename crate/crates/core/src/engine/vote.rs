//! Ballots, tallies and the win rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scenario::Victim;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub voter: String,
    pub accused: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub victim: String,
    /// In canonical voter order.
    pub ballots: Vec<Ballot>,
    pub counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub eliminated: Option<String>,
    pub case_won: bool,
}

/// The accused with the most votes is eliminated when it holds at least
/// half of all `voters` and no other accused has as many votes.
pub fn tally(victim: &Victim, voters: usize, ballots: Vec<Ballot>) -> VoteTally {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for b in &ballots {
        *counts.entry(b.accused.clone()).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let leaders: Vec<&String> = counts.iter().filter(|(_, c)| **c == top).map(|(a, _)| a).collect();
    let eliminated = (voters > 0 && leaders.len() == 1 && 2 * top >= voters).then(|| leaders[0].clone());
    let case_won = eliminated
        .as_ref()
        .is_some_and(|e| victim.murderers.iter().any(|m| m == e));
    VoteTally {
        victim: victim.name.clone(),
        ballots,
        counts,
        eliminated,
        case_won,
    }
}

/// Fraction of cases won; 0 for no cases.
pub fn win_rate(tallies: &[VoteTally]) -> f64 {
    if tallies.is_empty() {
        return 0.0;
    }
    tallies.iter().filter(|t| t.case_won).count() as f64 / tallies.len() as f64
}

/// The default accusation: the first entry of the voter's suspect list that
/// is not the voter.
pub fn head_of_list(voter: &str, suspects: &[String]) -> Option<String> {
    suspects.iter().find(|s| s.as_str() != voter).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn victim() -> Victim {
        Victim {
            name: "V".into(),
            murderers: vec!["M".into()],
        }
    }

    fn ballots(pairs: &[(&str, &str)]) -> Vec<Ballot> {
        pairs
            .iter()
            .map(|(v, a)| Ballot {
                voter: v.to_string(),
                accused: a.to_string(),
            })
            .collect()
    }

    #[test]
    fn three_of_five_eliminates() {
        let t = tally(&victim(), 5, ballots(&[("A", "M"), ("B", "M"), ("C", "M"), ("M", "A"), ("D", "A")]));
        assert_eq!(t.eliminated.as_deref(), Some("M"));
        assert!(t.case_won);
    }

    #[test]
    fn two_of_five_does_not() {
        let t = tally(&victim(), 5, ballots(&[("A", "M"), ("B", "M"), ("C", "D"), ("M", "A"), ("D", "C")]));
        assert_eq!(t.eliminated, None);
        assert!(!t.case_won);
    }

    #[test]
    fn tie_at_half_eliminates_nobody() {
        let t = tally(&victim(), 4, ballots(&[("A", "M"), ("B", "M"), ("C", "D"), ("M", "D")]));
        assert_eq!(t.eliminated, None);
    }

    #[test]
    fn innocent_eliminated_loses() {
        let t = tally(&victim(), 4, ballots(&[("A", "B"), ("C", "B"), ("M", "B"), ("B", "M")]));
        assert_eq!(t.eliminated.as_deref(), Some("B"));
        assert!(!t.case_won);
    }

    #[test]
    fn win_rate_one_of_three() {
        let won = tally(&victim(), 1, ballots(&[("A", "M")]));
        let lost = tally(&victim(), 1, ballots(&[("A", "B")]));
        let r = win_rate(&[won, lost.clone(), lost]);
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(format!("{r:.3}"), "0.333");
    }

    proptest! {
        #[test]
        fn head_of_list_never_self(list in prop::collection::vec(0usize..6, 1..6), voter in 0usize..6) {
            let names: Vec<String> = list.iter().map(|i| format!("p{i}")).collect();
            let me = format!("p{voter}");
            if let Some(a) = head_of_list(&me, &names) {
                prop_assert_ne!(a, me);
            } else {
                prop_assert!(names.iter().all(|n| *n == me));
            }
        }
    }
}
