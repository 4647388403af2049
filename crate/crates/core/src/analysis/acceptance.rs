use std::collections::BTreeMap;

use serde::Serialize;

use crate::sim::log::{AcceptanceKind, AcceptanceRecord};

/// Aggregated acceptance on one undirected edge over one interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EdgeAcceptance {
    /// Interval `i` covers steps `i·interval + 1 ..= (i+1)·interval`.
    pub interval: usize,
    /// Edge endpoints with `k < k2`.
    pub k: usize,
    pub k2: usize,
    pub kind: AcceptanceKind,
    /// Mean of `acceptances / proposals` over both directions and all steps.
    pub rate: f64,
    /// Fraction of those directed per-step records with no acceptance.
    pub zero_freq: f64,
}

/// Aggregates directed per-step acceptance records into per-edge rates.
/// Records without proposals are ignored. Output is ordered by interval,
/// kind (rep first), then edge.
pub fn acceptance_network(records: &[AcceptanceRecord], interval: usize) -> Vec<EdgeAcceptance> {
    let interval = interval.max(1);
    let kind_order = |k: AcceptanceKind| match k {
        AcceptanceKind::Rep => 0,
        AcceptanceKind::Creation => 1,
    };
    let mut groups: BTreeMap<(usize, u8, usize, usize), (f64, usize, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.proposals > 0 && r.step > 0) {
        let (k, k2) = (r.agent.min(r.partner), r.agent.max(r.partner));
        let key = ((r.step - 1) / interval, kind_order(r.kind), k, k2);
        let g = groups.entry(key).or_insert((0.0, 0, 0));
        g.0 += r.acceptances as f64 / r.proposals as f64;
        g.1 += 1;
        g.2 += usize::from(r.acceptances == 0);
    }
    groups
        .into_iter()
        .map(|((interval, kind, k, k2), (sum, n, zeros))| EdgeAcceptance {
            interval,
            k,
            k2,
            kind: if kind == 0 {
                AcceptanceKind::Rep
            } else {
                AcceptanceKind::Creation
            },
            rate: sum / n as f64,
            zero_freq: zeros as f64 / n as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: usize, agent: usize, partner: usize, proposals: usize, acceptances: usize) -> AcceptanceRecord {
        AcceptanceRecord {
            step,
            agent,
            partner,
            kind: AcceptanceKind::Creation,
            proposals,
            acceptances,
        }
    }

    #[test]
    fn all_accepted() {
        let recs: Vec<_> = (1..=4).flat_map(|t| [rec(t, 0, 1, 6, 6), rec(t, 1, 0, 6, 6)]).collect();
        let out = acceptance_network(&recs, 10);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].rate, out[0].zero_freq), (1.0, 0.0));
    }

    #[test]
    fn alternating_steps() {
        let recs: Vec<_> = (1..=10)
            .flat_map(|t| {
                let a = if t % 2 == 0 { 6 } else { 0 };
                [rec(t, 2, 5, 6, a), rec(t, 5, 2, 6, a)]
            })
            .collect();
        let out = acceptance_network(&recs, 10);
        assert_eq!((out[0].k, out[0].k2), (2, 5));
        assert_eq!((out[0].rate, out[0].zero_freq), (0.5, 0.5));
    }

    #[test]
    fn hand_tabulated_stream() {
        // interval 2: steps 1–2 → 0, steps 3–4 → 1
        let recs = [
            rec(1, 0, 1, 4, 1),
            rec(1, 1, 0, 4, 3),
            rec(2, 0, 1, 4, 0),
            rec(3, 0, 1, 2, 2),
            rec(3, 0, 2, 0, 0),
            AcceptanceRecord {
                kind: AcceptanceKind::Rep,
                ..rec(4, 2, 0, 10, 5)
            },
        ];
        let out = acceptance_network(&recs, 2);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].interval, 0);
        assert!((out[0].rate - (0.25 + 0.75 + 0.0) / 3.0).abs() < 1e-15);
        assert!((out[0].zero_freq - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            (out[1].interval, out[1].kind, out[1].k, out[1].k2),
            (1, AcceptanceKind::Rep, 0, 2)
        );
        assert_eq!(out[1].rate, 0.5);
        assert_eq!((out[2].k, out[2].k2, out[2].rate), (0, 1, 1.0));
    }

    #[test]
    fn empty_input() {
        assert!(acceptance_network(&[], 5).is_empty());
    }
}
