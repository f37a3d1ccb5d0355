use super::context::NegotiationContext;
use super::rule::RuleBackend;
use super::transcript::{Scope, TranscriptEvent};
use super::{ConsensusLevel, NegotiationError, NegotiatorBackend, PassOrder, PrecedencePreference};
use crate::domain::VehicleId;
use crate::influence::FollowingRelation;
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

pub const MAX_RESOLVE_ATTEMPTS: u32 = 3;

type Edge = (VehicleId, VehicleId);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    Omitted { vehicle: VehicleId },
    Added { vehicle: VehicleId },
    Duplicate { vehicle: VehicleId },
    FollowingOrder { leader: VehicleId, follower: VehicleId },
    Cycle { vehicles: Vec<VehicleId> },
    WrongGroup { vehicle: VehicleId, stated: usize, actual: usize },
    GroupOrderChanged { group: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Omitted { vehicle } => write!(f, "vehicle {vehicle} is missing"),
            Violation::Added { vehicle } => write!(f, "vehicle {vehicle} is not a participant"),
            Violation::Duplicate { vehicle } => write!(f, "vehicle {vehicle} appears more than once"),
            Violation::FollowingOrder { leader, follower } => {
                write!(f, "follower {follower} is placed before its leader {leader}")
            }
            Violation::Cycle { vehicles } => {
                let ids: Vec<String> = vehicles.iter().map(|v| v.to_string()).collect();
                write!(f, "precedences form a cycle among {}", ids.join(", "))
            }
            Violation::WrongGroup { vehicle, stated, actual } => {
                write!(f, "vehicle {vehicle} is labelled group {stated} but belongs to group {actual}")
            }
            Violation::GroupOrderChanged { group } => write!(f, "the internal order of group {group} was changed"),
        }
    }
}

fn pair_key(a: VehicleId, b: VehicleId) -> Edge {
    (a.min(b), a.max(b))
}

/// Collects one opinion per member and checks that each covers every
/// conflict pair exactly once.
pub fn generate_opinions(
    backend: &dyn NegotiatorBackend,
    ctx: &NegotiationContext,
) -> Result<BTreeMap<VehicleId, Vec<PrecedencePreference>>, NegotiationError> {
    let pairs: BTreeSet<Edge> = ctx.conflicts.iter().map(|c| c.key()).collect();
    let mut out = BTreeMap::new();
    for ego in ctx.ids() {
        let opinion = backend.opinion(ctx, ego)?;
        let mut covered = BTreeSet::new();
        for p in &opinion {
            let key = pair_key(p.first, p.second);
            if p.first == p.second || !pairs.contains(&key) || !covered.insert(key) {
                return Err(NegotiationError::IncompleteOpinion {
                    vehicle: ego,
                    first: p.first,
                    second: p.second,
                });
            }
        }
        if let Some(&(first, second)) = pairs.difference(&covered).next() {
            return Err(NegotiationError::IncompleteOpinion {
                vehicle: ego,
                first,
                second,
            });
        }
        out.insert(ego, opinion);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusTally {
    pub level: ConsensusLevel,
    pub votes: usize,
    pub agreeing: usize,
    /// The direction with most votes; ties favour the lower id first.
    pub majority: Edge,
}

/// Exact when every vote agrees, Basic when at least two thirds (rounded up)
/// agree, None otherwise.
pub fn classify_consensus(opinions: &BTreeMap<VehicleId, Vec<PrecedencePreference>>, pair: Edge) -> ConsensusTally {
    let key = pair_key(pair.0, pair.1);
    let mut forward: usize = 0;
    let mut backward: usize = 0;
    for prefs in opinions.values() {
        for p in prefs.iter().filter(|p| pair_key(p.first, p.second) == key) {
            if p.edge() == key {
                forward += 1;
            } else {
                backward += 1;
            }
        }
    }
    let votes = forward + backward;
    let (agreeing, majority) = if backward > forward {
        (backward, (key.1, key.0))
    } else {
        (forward, key)
    };
    let threshold = (2 * votes).div_ceil(3);
    let level = if votes > 0 && agreeing == votes {
        ConsensusLevel::Exact
    } else if votes > 0 && agreeing >= threshold {
        ConsensusLevel::Basic
    } else {
        ConsensusLevel::None
    };
    ConsensusTally {
        level,
        votes,
        agreeing,
        majority,
    }
}

fn has_cycle(nodes: &[VehicleId], edges: &[Edge]) -> Option<Vec<VehicleId>> {
    let mut all: BTreeSet<VehicleId> = nodes.iter().copied().collect();
    for &(a, b) in edges {
        all.insert(a);
        all.insert(b);
    }
    let mut indeg: BTreeMap<VehicleId, usize> = all.iter().map(|v| (*v, 0)).collect();
    let mut out: BTreeMap<VehicleId, Vec<VehicleId>> = BTreeMap::new();
    let unique: BTreeSet<Edge> = edges.iter().copied().collect();
    for &(a, b) in &unique {
        *indeg.get_mut(&b).expect("node registered") += 1;
        out.entry(a).or_default().push(b);
    }
    let mut queue: VecDeque<VehicleId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(v, _)| *v).collect();
    let mut removed = BTreeSet::new();
    while let Some(v) = queue.pop_front() {
        removed.insert(v);
        for w in out.get(&v).into_iter().flatten() {
            let d = indeg.get_mut(w).expect("node registered");
            *d -= 1;
            if *d == 0 {
                queue.push_back(*w);
            }
        }
    }
    let stuck: Vec<VehicleId> = all.difference(&removed).copied().collect();
    (!stuck.is_empty()).then_some(stuck)
}

fn in_group_following(group: &[VehicleId], following: &[FollowingRelation]) -> Vec<Edge> {
    following
        .iter()
        .filter(|r| group.contains(&r.leader) && group.contains(&r.follower))
        .map(|r| (r.leader, r.follower))
        .collect()
}

/// Checks pairwise precedences against the participant set, the
/// leader-follower relations and acyclicity. All violations are returned.
pub fn validate_precedences(precedences: &[Edge], group: &[VehicleId], following: &[FollowingRelation]) -> Vec<Violation> {
    let mut violations = Vec::new();
    let outsiders: BTreeSet<VehicleId> = precedences
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .filter(|v| !group.contains(v))
        .collect();
    violations.extend(outsiders.into_iter().map(|vehicle| Violation::Added { vehicle }));
    let follow = in_group_following(group, following);
    for &(leader, follower) in &follow {
        if precedences.contains(&(follower, leader)) {
            violations.push(Violation::FollowingOrder { leader, follower });
        }
    }
    let mut edges = precedences.to_vec();
    edges.extend(follow);
    if let Some(vehicles) = has_cycle(group, &edges) {
        violations.push(Violation::Cycle { vehicles });
    }
    violations
}

/// Checks a total order: every participant exactly once and no follower
/// ahead of its leader.
pub fn validate_order(order: &[VehicleId], group: &[VehicleId], following: &[FollowingRelation]) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for v in order {
        if !seen.insert(*v) {
            dup.insert(*v);
        }
    }
    let members: BTreeSet<VehicleId> = group.iter().copied().collect();
    violations.extend(members.difference(&seen).map(|&vehicle| Violation::Omitted { vehicle }));
    violations.extend(seen.difference(&members).map(|&vehicle| Violation::Added { vehicle }));
    violations.extend(dup.into_iter().map(|vehicle| Violation::Duplicate { vehicle }));
    let pos = |v: VehicleId| order.iter().position(|x| *x == v);
    for (leader, follower) in in_group_following(group, following) {
        if let (Some(l), Some(f)) = (pos(leader), pos(follower)) {
            if f < l {
                violations.push(Violation::FollowingOrder { leader, follower });
            }
        }
    }
    violations
}

#[derive(PartialEq)]
struct Key(f64, VehicleId);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Topological order of `members` under `edges`; among free vehicles the
/// earliest arrival (then lowest id) goes first. Edges touching
/// non-members are ignored.
pub fn linearize(
    members: &[VehicleId],
    edges: &[Edge],
    eta: impl Fn(VehicleId) -> f64,
) -> Result<Vec<VehicleId>, NegotiationError> {
    let set: BTreeSet<VehicleId> = members.iter().copied().collect();
    let unique: BTreeSet<Edge> = edges
        .iter()
        .copied()
        .filter(|(a, b)| a != b && set.contains(a) && set.contains(b))
        .collect();
    let mut indeg: BTreeMap<VehicleId, usize> = set.iter().map(|v| (*v, 0)).collect();
    let mut out: BTreeMap<VehicleId, Vec<VehicleId>> = BTreeMap::new();
    for &(a, b) in &unique {
        *indeg.get_mut(&b).expect("member") += 1;
        out.entry(a).or_default().push(b);
    }
    let mut heap: BinaryHeap<Reverse<Key>> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(v, _)| Reverse(Key(eta(*v), *v)))
        .collect();
    let mut order = Vec::with_capacity(set.len());
    while let Some(Reverse(Key(_, v))) = heap.pop() {
        order.push(v);
        for w in out.get(&v).into_iter().flatten() {
            let d = indeg.get_mut(w).expect("member");
            *d -= 1;
            if *d == 0 {
                heap.push(Reverse(Key(eta(*w), *w)));
            }
        }
    }
    if order.len() == set.len() {
        Ok(order)
    } else {
        Err(NegotiationError::Cyclic)
    }
}

/// The deterministic first-come-first-served order of the context.
pub fn fcfs_order(ctx: &NegotiationContext) -> Vec<VehicleId> {
    let ids = ctx.ids();
    let Some(&ego) = ids.first() else { return Vec::new() };
    let mut edges: Vec<Edge> = RuleBackend
        .opinion(ctx, ego)
        .expect("rule backend is infallible")
        .iter()
        .map(PrecedencePreference::edge)
        .collect();
    edges.extend(ctx.following_edges());
    linearize(&ids, &edges, |v| ctx.eta(v))
        .or_else(|_| linearize(&ids, &ctx.following_edges(), |v| ctx.eta(v)))
        .unwrap_or_else(|_| {
            let mut by_eta = ids.clone();
            by_eta.sort_by(|a, b| Key(ctx.eta(*a), *a).cmp(&Key(ctx.eta(*b), *b)));
            by_eta
        })
}

/// Asks the backend to settle the disputed pairs, rejecting answers that miss
/// a pair, add one, or close a cycle with what is already agreed.
pub fn resolve_divergence(
    backend: &dyn NegotiatorBackend,
    ctx: &NegotiationContext,
    disputed: &[Edge],
    agreed: &[Edge],
) -> Result<Vec<PrecedencePreference>, NegotiationError> {
    let wanted: BTreeSet<Edge> = disputed.iter().map(|&(a, b)| pair_key(a, b)).collect();
    let ids = ctx.ids();
    let mut last_backend_error = None;
    for _ in 0..MAX_RESOLVE_ATTEMPTS {
        let answer = match backend.resolve(ctx, disputed, agreed) {
            Ok(a) => a,
            Err(e) => {
                last_backend_error = Some(e);
                continue;
            }
        };
        last_backend_error = None;
        let keys: Vec<Edge> = answer.iter().map(|p| pair_key(p.first, p.second)).collect();
        let unique: BTreeSet<Edge> = keys.iter().copied().collect();
        if keys.len() != wanted.len() || unique != wanted || answer.iter().any(|p| p.first == p.second) {
            continue;
        }
        let mut edges: Vec<Edge> = agreed.to_vec();
        edges.extend(answer.iter().map(PrecedencePreference::edge));
        edges.extend(ctx.following_edges());
        if has_cycle(&ids, &edges).is_none() {
            return Ok(answer);
        }
    }
    match last_backend_error {
        Some(e) => Err(e.into()),
        None => Err(NegotiationError::UnresolvableDispute {
            attempts: MAX_RESOLVE_ATTEMPTS,
        }),
    }
}

fn committed(scope: Scope, order: &[VehicleId], rounds: u32, fallback: bool) -> TranscriptEvent {
    TranscriptEvent::Committed {
        scope,
        order: order.to_vec(),
        rounds,
        fallback,
    }
}

/// Negotiates the pass order of one group.
///
/// Rounds repeat until the precedences validate, for at most
/// `max_renegotiations + 1` rounds; after that the first-come-first-served
/// order is used and flagged. A single vehicle needs no round.
pub fn intra_group_order(
    backend: &dyn NegotiatorBackend,
    ctx: &NegotiationContext,
    max_renegotiations: u32,
    scope: Scope,
) -> (PassOrder, Vec<TranscriptEvent>) {
    let members = ctx.ids();
    let mut events = Vec::new();
    let finish = |order: Vec<VehicleId>, rounds: u32, fallback: bool, events: &mut Vec<TranscriptEvent>| {
        events.push(committed(scope, &order, rounds, fallback));
        PassOrder {
            ordered_ids: order,
            scope,
            rounds_used: rounds,
            backend_name: backend.name().to_string(),
            fallback,
        }
    };
    if members.len() <= 1 {
        let order = finish(members, 0, false, &mut events);
        return (order, events);
    }
    let mut round_ctx = ctx.clone();
    for round in 1..=max_renegotiations + 1 {
        let opinions = match generate_opinions(backend, &round_ctx) {
            Ok(o) => o,
            Err(e) => {
                events.push(TranscriptEvent::BackendFailure {
                    scope,
                    round,
                    error: e.to_string(),
                });
                round_ctx.feedback.push(format!("round {round}: {e}"));
                continue;
            }
        };
        for (vehicle, prefs) in &opinions {
            events.push(TranscriptEvent::Opinion {
                scope,
                round,
                vehicle: *vehicle,
                precedences: prefs.iter().map(PrecedencePreference::edge).collect(),
            });
        }
        let mut agreed = Vec::new();
        let mut disputed = Vec::new();
        for c in &ctx.conflicts {
            let tally = classify_consensus(&opinions, c.key());
            events.push(TranscriptEvent::Consensus {
                scope,
                round,
                pair: c.key(),
                level: tally.level,
                votes: tally.votes,
                agreeing: tally.agreeing,
            });
            match tally.level {
                ConsensusLevel::Exact => agreed.push(tally.majority),
                _ => disputed.push(c.key()),
            }
        }
        let mut precedences = agreed.clone();
        if !disputed.is_empty() {
            match resolve_divergence(backend, &round_ctx, &disputed, &agreed) {
                Ok(resolved) => {
                    let edges: Vec<Edge> = resolved.iter().map(PrecedencePreference::edge).collect();
                    events.push(TranscriptEvent::Resolution {
                        scope,
                        round,
                        precedences: edges.clone(),
                    });
                    precedences.extend(edges);
                }
                Err(e) => {
                    events.push(TranscriptEvent::BackendFailure {
                        scope,
                        round,
                        error: e.to_string(),
                    });
                    round_ctx.feedback.push(format!("round {round}: {e}"));
                    continue;
                }
            }
        }
        let mut violations = validate_precedences(&precedences, &members, &ctx.following);
        let mut order = Vec::new();
        if violations.is_empty() {
            let mut edges = precedences.clone();
            edges.extend(ctx.following_edges());
            match linearize(&members, &edges, |v| ctx.eta(v)) {
                Ok(o) => {
                    violations = validate_order(&o, &members, &ctx.following);
                    order = o;
                }
                Err(_) => violations.push(Violation::Cycle { vehicles: members.clone() }),
            }
        }
        if violations.is_empty() {
            let order = finish(order, round, false, &mut events);
            return (order, events);
        }
        let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        round_ctx.feedback.extend(lines.iter().map(|l| format!("round {round}: {l}")));
        events.push(TranscriptEvent::Violations {
            scope,
            round,
            violations: lines,
        });
    }
    let order = finish(fcfs_order(ctx), max_renegotiations + 1, true, &mut events);
    (order, events)
}

fn group_label(order: &PassOrder, position: usize) -> usize {
    order.scope.group_index().unwrap_or(position)
}

/// Checks a merged `(vehicle, group)` list against the group orders.
pub fn validate_merge(proposal: &[(VehicleId, usize)], intra: &[PassOrder], following: &[FollowingRelation]) -> Vec<Violation> {
    let ids: Vec<VehicleId> = proposal.iter().map(|p| p.0).collect();
    let all: Vec<VehicleId> = intra.iter().flat_map(|o| o.ordered_ids.iter().copied()).collect();
    let mut violations = validate_order(&ids, &all, following);
    for (pos, order) in intra.iter().enumerate() {
        let label = group_label(order, pos);
        for &(vehicle, stated) in proposal.iter().filter(|p| order.ordered_ids.contains(&p.0)) {
            if stated != label {
                violations.push(Violation::WrongGroup {
                    vehicle,
                    stated,
                    actual: label,
                });
            }
        }
        let mut restricted: Vec<VehicleId> = ids.iter().copied().filter(|v| order.ordered_ids.contains(v)).collect();
        restricted.dedup();
        if restricted != order.ordered_ids {
            violations.push(Violation::GroupOrderChanged { group: label });
        }
    }
    violations
}

/// Merges group orders by repeatedly taking the group head with the earliest
/// arrival whose leaders have all been placed. If every head waits on an
/// unplaced leader, the earliest vehicle with all leaders placed is taken
/// out of turn.
pub fn kway_merge(intra: &[PassOrder], ctx: &NegotiationContext) -> Vec<(VehicleId, usize)> {
    let mut queues: Vec<(usize, VecDeque<VehicleId>)> = intra
        .iter()
        .enumerate()
        .map(|(pos, o)| (group_label(o, pos), o.ordered_ids.iter().copied().collect()))
        .collect();
    let members: BTreeSet<VehicleId> = queues.iter().flat_map(|q| q.1.iter().copied()).collect();
    let leaders_of = |v: VehicleId| -> Vec<VehicleId> {
        ctx.following
            .iter()
            .filter(|r| r.follower == v && members.contains(&r.leader))
            .map(|r| r.leader)
            .collect()
    };
    let mut placed: BTreeSet<VehicleId> = BTreeSet::new();
    let mut out = Vec::with_capacity(members.len());
    while out.len() < members.len() {
        let ready = |v: VehicleId, placed: &BTreeSet<VehicleId>| leaders_of(v).iter().all(|l| placed.contains(l));
        let pick = queues
            .iter()
            .enumerate()
            .filter_map(|(qi, (_, q))| q.front().map(|v| (qi, *v)))
            .filter(|(_, v)| ready(*v, &placed))
            .min_by(|a, b| Key(ctx.eta(a.1), a.1).cmp(&Key(ctx.eta(b.1), b.1)))
            .or_else(|| {
                queues
                    .iter()
                    .enumerate()
                    .flat_map(|(qi, (_, q))| q.iter().map(move |v| (qi, *v)))
                    .filter(|(_, v)| ready(*v, &placed))
                    .min_by(|a, b| Key(ctx.eta(a.1), a.1).cmp(&Key(ctx.eta(b.1), b.1)))
            })
            .or_else(|| {
                queues
                    .iter()
                    .enumerate()
                    .filter_map(|(qi, (_, q))| q.front().map(|v| (qi, *v)))
                    .min_by(|a, b| Key(ctx.eta(a.1), a.1).cmp(&Key(ctx.eta(b.1), b.1)))
            });
        let (qi, v) = pick.expect("unplaced vehicles remain");
        let label = queues[qi].0;
        queues[qi].1.retain(|x| *x != v);
        placed.insert(v);
        out.push((v, label));
    }
    out
}

/// Merges group orders into one global order.
///
/// Proposals are validated for completeness, group labels, preserved group
/// orders and leader-follower relations, with the same round cap and a
/// k-way merge as fallback.
pub fn inter_group_order(
    backend: &dyn NegotiatorBackend,
    intra: &[PassOrder],
    ctx: &NegotiationContext,
    max_renegotiations: u32,
) -> (PassOrder, Vec<TranscriptEvent>) {
    let mut events = Vec::new();
    let finish = |order: Vec<VehicleId>, rounds: u32, fallback: bool, events: &mut Vec<TranscriptEvent>| {
        events.push(committed(Scope::Global, &order, rounds, fallback));
        PassOrder {
            ordered_ids: order,
            scope: Scope::Global,
            rounds_used: rounds,
            backend_name: backend.name().to_string(),
            fallback,
        }
    };
    if intra.len() <= 1 {
        let order = intra.first().map(|o| o.ordered_ids.clone()).unwrap_or_default();
        let order = finish(order, 0, false, &mut events);
        return (order, events);
    }
    let mut round_ctx = ctx.clone();
    for round in 1..=max_renegotiations + 1 {
        let proposal = match backend.merge(intra, &round_ctx) {
            Ok(p) => p,
            Err(e) => {
                events.push(TranscriptEvent::BackendFailure {
                    scope: Scope::Global,
                    round,
                    error: e.to_string(),
                });
                round_ctx.feedback.push(format!("round {round}: {e}"));
                continue;
            }
        };
        events.push(TranscriptEvent::MergeProposal {
            round,
            order: proposal.clone(),
        });
        let violations = validate_merge(&proposal, intra, &ctx.following);
        if violations.is_empty() {
            let order = finish(proposal.into_iter().map(|p| p.0).collect(), round, false, &mut events);
            return (order, events);
        }
        let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        round_ctx.feedback.extend(lines.iter().map(|l| format!("round {round}: {l}")));
        events.push(TranscriptEvent::Violations {
            scope: Scope::Global,
            round,
            violations: lines,
        });
    }
    let merged = kway_merge(intra, ctx).into_iter().map(|p| p.0).collect();
    let order = finish(merged, max_renegotiations + 1, true, &mut events);
    (order, events)
}
