use super::context::NegotiationContext;
use super::protocol::kway_merge;
use super::{BackendError, NegotiatorBackend, PassOrder, PrecedencePreference};
use crate::domain::VehicleId;
use std::collections::{BTreeMap, BTreeSet};

/// First-come-first-served oracle.
///
/// Every vehicle states the same precedences: the one with the earlier
/// arrival at the shared conflict point goes first, ties to the lower id.
/// Decisions are taken in order of decreasing arrival margin and a decision
/// that would close a cycle with following relations, prior agreements or
/// earlier decisions is reversed.
#[derive(Debug, Clone, Default)]
pub struct RuleBackend;

pub const RULE_BACKEND_NAME: &str = "rule";

#[derive(Default)]
struct Dag {
    out: BTreeMap<VehicleId, BTreeSet<VehicleId>>,
}

impl Dag {
    fn reaches(&self, from: VehicleId, to: VehicleId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(x) = stack.pop() {
            if x == to {
                return true;
            }
            if seen.insert(x) {
                if let Some(next) = self.out.get(&x) {
                    stack.extend(next.iter().copied());
                }
            }
        }
        false
    }

    /// Inserts `a -> b`, or `b -> a` if the former would close a cycle.
    fn insert_or_reverse(&mut self, a: VehicleId, b: VehicleId) -> (VehicleId, VehicleId) {
        let (x, y) = if self.reaches(b, a) { (b, a) } else { (a, b) };
        self.out.entry(x).or_default().insert(y);
        (x, y)
    }
}

fn decide(
    ctx: &NegotiationContext,
    pairs: &[(VehicleId, VehicleId)],
    agreed: &[(VehicleId, VehicleId)],
) -> Vec<(VehicleId, VehicleId, String)> {
    let mut dag = Dag::default();
    for (a, b) in ctx.following_edges().into_iter().chain(ctx.agreed.iter().copied()).chain(agreed.iter().copied()) {
        if !dag.reaches(b, a) {
            dag.out.entry(a).or_default().insert(b);
        }
    }
    let mut items: Vec<(f64, VehicleId, VehicleId, String)> = pairs
        .iter()
        .map(|&(p, q)| {
            let key = (p.min(q), p.max(q));
            match ctx.conflicts.iter().find(|c| c.key() == key) {
                Some(c) => {
                    let (first, second) = c.fcfs();
                    let (ef, es) = if first == c.a { (c.eta_a, c.eta_b) } else { (c.eta_b, c.eta_a) };
                    let why = format!("{first} reaches conflict point {} at {ef:.2} s, {second} at {es:.2} s", c.conflict_id);
                    ((es - ef).abs(), first, second, why)
                }
                None => {
                    let (ea, eb) = (ctx.eta(key.0), ctx.eta(key.1));
                    let (first, second) = if eb < ea { (key.1, key.0) } else { key };
                    (ea.max(eb) - ea.min(eb), first, second, "earlier arrival".to_string())
                }
            }
        })
        .collect();
    items.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then((x.1.min(x.2), x.1.max(x.2)).cmp(&(y.1.min(y.2), y.1.max(y.2))))
    });
    let mut out: Vec<(VehicleId, VehicleId, String)> = items
        .into_iter()
        .map(|(_, first, second, why)| {
            let (x, y) = dag.insert_or_reverse(first, second);
            let why = if (x, y) == (first, second) { why } else { format!("{why}; reversed to keep the order acyclic") };
            (x, y, why)
        })
        .collect();
    out.sort_by_key(|e| (e.0.min(e.1), e.0.max(e.1)));
    out
}

impl NegotiatorBackend for RuleBackend {
    fn name(&self) -> &str {
        RULE_BACKEND_NAME
    }

    fn opinion(&self, ctx: &NegotiationContext, ego: VehicleId) -> Result<Vec<PrecedencePreference>, BackendError> {
        let pairs: Vec<_> = ctx.conflicts.iter().map(|c| c.key()).collect();
        Ok(decide(ctx, &pairs, &[])
            .into_iter()
            .map(|(first, second, rationale)| PrecedencePreference {
                first,
                second,
                stated_by: ego,
                rationale,
            })
            .collect())
    }

    fn resolve(
        &self,
        ctx: &NegotiationContext,
        disputed: &[(VehicleId, VehicleId)],
        agreed: &[(VehicleId, VehicleId)],
    ) -> Result<Vec<PrecedencePreference>, BackendError> {
        Ok(decide(ctx, disputed, agreed)
            .into_iter()
            .map(|(first, second, rationale)| PrecedencePreference {
                first,
                second,
                stated_by: first.min(second),
                rationale,
            })
            .collect())
    }

    fn merge(&self, intra: &[PassOrder], ctx: &NegotiationContext) -> Result<Vec<(VehicleId, usize)>, BackendError> {
        Ok(kway_merge(intra, ctx))
    }
}
