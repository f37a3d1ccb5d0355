#![allow(dead_code)]

use crossnego::domain::{Vec2, VehicleId};
use crossnego::grouping::Motif;
use crossnego::influence::FollowingRelation;
use crossnego::negotiation::{
    BackendError, ConflictPair, MemberInfo, NegotiationContext, NegotiatorBackend, PassOrder, PrecedencePreference,
};
use crossnego::rng::{seeded_rng, SimRng};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

/// Nonnegative weighted digraph with zero diagonal.
pub fn random_digraph(rng: &mut SimRng, n: usize, density: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |r, c| {
        if r != c && rng.random_bool(density) {
            rng.random_range(0.01..1.0)
        } else {
            0.0
        }
    })
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (k, &x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(k);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// Sum of edge products over every simple path, found by trying every
/// ordered subset of intermediate nodes.
pub fn brute_cumulative(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut f = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let others: Vec<usize> = (0..n).filter(|&k| k != i && k != j).collect();
            for mask in 0u32..(1 << others.len()) {
                let subset: Vec<usize> = (0..others.len()).filter(|b| mask & (1 << b) != 0).map(|b| others[b]).collect();
                for middle in permutations(&subset) {
                    let mut nodes = vec![i];
                    nodes.extend(middle);
                    nodes.push(j);
                    let product: f64 = nodes.windows(2).map(|w| a[(w[0], w[1])]).product();
                    if nodes.windows(2).all(|w| a[(w[0], w[1])] > 0.0) {
                        f[(i, j)] += product;
                    }
                }
            }
        }
    }
    f
}

/// Permutations of motif nodes that keep the edge set and the anchor set.
pub fn anchored_automorphisms(motif: &Motif) -> usize {
    let nodes: Vec<usize> = (0..motif.node_count).collect();
    let edges: BTreeSet<(usize, usize)> = motif.edges.iter().copied().collect();
    let anchors: BTreeSet<usize> = motif.anchors.iter().copied().collect();
    permutations(&nodes)
        .into_iter()
        .filter(|p| {
            let mapped: BTreeSet<(usize, usize)> = edges.iter().map(|&(a, b)| (p[a], p[b])).collect();
            let anchored: BTreeSet<usize> = anchors.iter().map(|&a| p[a]).collect();
            mapped == edges && anchored == anchors
        })
        .count()
}

/// Motif adjacency by summing over every injective node mapping and
/// dividing out the anchored automorphisms that map to the same instance.
pub fn brute_mam(w: &DMatrix<f64>, motif: &Motif) -> DMatrix<f64> {
    let n = w.nrows();
    let mut m = DMatrix::zeros(n, n);
    let aut = anchored_automorphisms(motif) as f64;
    let size = motif.edges.len() as f64;
    let mut map = vec![0usize; motif.node_count];
    fn visit(
        depth: usize,
        n: usize,
        map: &mut Vec<usize>,
        w: &DMatrix<f64>,
        motif: &Motif,
        size: f64,
        aut: f64,
        m: &mut DMatrix<f64>,
    ) {
        if depth == motif.node_count {
            if motif.edges.iter().all(|&(a, b)| w[(map[a], map[b])] > 0.0) {
                let g: f64 = motif.edges.iter().map(|&(a, b)| w[(map[a], map[b])]).sum::<f64>() / size;
                for (x, &ax) in motif.anchors.iter().enumerate() {
                    for &ay in &motif.anchors[x + 1..] {
                        m[(map[ax], map[ay])] += g / aut;
                        m[(map[ay], map[ax])] += g / aut;
                    }
                }
            }
            return;
        }
        for v in 0..n {
            if !map[..depth].contains(&v) {
                map[depth] = v;
                visit(depth + 1, n, map, w, motif, size, aut, m);
            }
        }
    }
    visit(0, n, &mut map, w, motif, size, aut, &mut m);
    m
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Synthetic negotiation context: random arrival times, a random set of
/// conflicting pairs and a few leader-follower chains.
pub fn random_context(rng: &mut SimRng, n: usize) -> NegotiationContext {
    let members: Vec<MemberInfo> = (1..=n as u32)
        .map(|id| {
            let distance = rng.random_range(5.0..80.0);
            let speed = rng.random_range(2.0..10.0);
            MemberInfo {
                id: VehicleId(id),
                route: format!("R{}", rng.random_range(0..12)),
                position: Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)),
                speed,
                distance,
                eta: distance / speed,
            }
        })
        .collect();
    let mut conflicts = Vec::new();
    let mut following = Vec::new();
    for (x, a) in members.iter().enumerate() {
        for b in &members[x + 1..] {
            if rng.random_bool(0.6) {
                conflicts.push(ConflictPair {
                    a: a.id,
                    b: b.id,
                    conflict_id: conflicts.len(),
                    location: Vec2::ZERO,
                    speed_a: a.speed,
                    speed_b: b.speed,
                    distance_a: a.distance,
                    distance_b: b.distance,
                    eta_a: a.eta,
                    eta_b: b.eta,
                });
            } else if rng.random_bool(0.15) {
                let (leader, follower) = if a.eta <= b.eta { (a.id, b.id) } else { (b.id, a.id) };
                following.push(FollowingRelation {
                    leader,
                    follower,
                    gap: 12.0,
                });
            }
        }
    }
    NegotiationContext {
        members,
        conflicts,
        following,
        agreed: Vec::new(),
        feedback: Vec::new(),
    }
}

/// Backend whose replies are random: sometimes valid, sometimes cyclic,
/// reversed, omissive, padded with strangers or refused outright.
pub struct Adversarial {
    rng: Mutex<SimRng>,
}

impl Adversarial {
    pub fn new(seed: u64) -> Adversarial {
        Adversarial {
            rng: Mutex::new(seeded_rng(seed, "test/adversarial")),
        }
    }

    fn prefs(&self, ctx: &NegotiationContext, pairs: &[(VehicleId, VehicleId)], ego: VehicleId) -> Result<Vec<PrecedencePreference>, BackendError> {
        let mut rng = self.rng.lock().unwrap();
        let pref = |first, second| PrecedencePreference {
            first,
            second,
            stated_by: ego,
            rationale: String::new(),
        };
        let mode = rng.random_range(0..6);
        let mut out: Vec<PrecedencePreference> = pairs
            .iter()
            .map(|&(a, b)| if rng.random_bool(0.5) { pref(a, b) } else { pref(b, a) })
            .collect();
        match mode {
            0 => {
                return Err(BackendError {
                    backend: "adversarial".into(),
                    message: "refused".into(),
                })
            }
            1 => {
                out.truncate(rng.random_range(0..=out.len()));
            }
            2 => {
                let ids = ctx.ids();
                if ids.len() >= 3 {
                    out.push(pref(ids[0], ids[1]));
                    out.push(pref(ids[1], ids[2]));
                    out.push(pref(ids[2], ids[0]));
                }
            }
            3 => out.push(pref(VehicleId(900), ctx.ids()[0])),
            4 => {
                let dup = out.first().cloned();
                out.extend(dup);
            }
            _ => {}
        }
        Ok(out)
    }
}

impl NegotiatorBackend for Adversarial {
    fn name(&self) -> &str {
        "adversarial"
    }

    fn opinion(&self, ctx: &NegotiationContext, ego: VehicleId) -> Result<Vec<PrecedencePreference>, BackendError> {
        let pairs: Vec<(VehicleId, VehicleId)> = ctx.conflicts.iter().map(|c| c.key()).collect();
        self.prefs(ctx, &pairs, ego)
    }

    fn resolve(
        &self,
        ctx: &NegotiationContext,
        disputed: &[(VehicleId, VehicleId)],
        _agreed: &[(VehicleId, VehicleId)],
    ) -> Result<Vec<PrecedencePreference>, BackendError> {
        self.prefs(ctx, disputed, VehicleId(0))
    }

    fn merge(&self, intra: &[PassOrder], _ctx: &NegotiationContext) -> Result<Vec<(VehicleId, usize)>, BackendError> {
        let mut rng = self.rng.lock().unwrap();
        let mut labelled: Vec<(VehicleId, usize)> = intra
            .iter()
            .enumerate()
            .flat_map(|(g, o)| o.ordered_ids.iter().map(move |v| (*v, o.scope.group_index().unwrap_or(g))))
            .collect();
        match rng.random_range(0..6) {
            0 => {
                return Err(BackendError {
                    backend: "adversarial".into(),
                    message: "timeout".into(),
                })
            }
            1 => {
                labelled.pop();
            }
            2 => labelled.shuffle(&mut *rng),
            3 => {
                if let Some(first) = labelled.first_mut() {
                    first.1 += 1;
                }
            }
            4 => {
                let dup = labelled.first().copied();
                labelled.extend(dup);
            }
            _ => {
                // A valid interleaving: repeatedly take the head of a random group.
                let mut queues: Vec<Vec<(VehicleId, usize)>> = intra
                    .iter()
                    .enumerate()
                    .map(|(g, o)| {
                        o.ordered_ids
                            .iter()
                            .rev()
                            .map(|v| (*v, o.scope.group_index().unwrap_or(g)))
                            .collect()
                    })
                    .collect();
                labelled.clear();
                while queues.iter().any(|q| !q.is_empty()) {
                    let live: Vec<usize> = (0..queues.len()).filter(|&k| !queues[k].is_empty()).collect();
                    let k = live[rng.random_range(0..live.len())];
                    labelled.push(queues[k].pop().unwrap());
                }
            }
        }
        Ok(labelled)
    }
}

/// Backend that answers first-come-first-served but, per opinion request,
/// returns an incomplete reply with probability `p`.
pub struct Disagreeing {
    pub p: f64,
    rng: Mutex<SimRng>,
}

impl Disagreeing {
    pub fn new(p: f64, seed: u64) -> Disagreeing {
        Disagreeing {
            p,
            rng: Mutex::new(seeded_rng(seed, "test/disagreeing")),
        }
    }
}

impl NegotiatorBackend for Disagreeing {
    fn name(&self) -> &str {
        "disagreeing"
    }

    fn opinion(&self, ctx: &NegotiationContext, ego: VehicleId) -> Result<Vec<PrecedencePreference>, BackendError> {
        let mut out: Vec<PrecedencePreference> = ctx
            .conflicts
            .iter()
            .map(|c| {
                let (first, second) = c.fcfs();
                PrecedencePreference {
                    first,
                    second,
                    stated_by: ego,
                    rationale: String::new(),
                }
            })
            .collect();
        if self.rng.lock().unwrap().random_bool(self.p) {
            out.pop();
        }
        Ok(out)
    }

    fn resolve(
        &self,
        ctx: &NegotiationContext,
        disputed: &[(VehicleId, VehicleId)],
        _agreed: &[(VehicleId, VehicleId)],
    ) -> Result<Vec<PrecedencePreference>, BackendError> {
        Ok(disputed
            .iter()
            .map(|&(a, b)| {
                let (first, second) = if ctx.eta(a) <= ctx.eta(b) { (a, b) } else { (b, a) };
                PrecedencePreference {
                    first,
                    second,
                    stated_by: first,
                    rationale: String::new(),
                }
            })
            .collect())
    }

    fn merge(&self, intra: &[PassOrder], _ctx: &NegotiationContext) -> Result<Vec<(VehicleId, usize)>, BackendError> {
        Ok(intra
            .iter()
            .enumerate()
            .flat_map(|(g, o)| o.ordered_ids.iter().map(move |v| (*v, g)))
            .collect())
    }
}

/// Fully connected context of `n` vehicles with distinct arrival times.
pub fn clique_context(n: usize) -> NegotiationContext {
    let members: Vec<MemberInfo> = (1..=n as u32)
        .map(|id| MemberInfo {
            id: VehicleId(id),
            route: format!("R{id}"),
            position: Vec2::ZERO,
            speed: 8.0,
            distance: 10.0 * f64::from(id),
            eta: 1.25 * f64::from(id),
        })
        .collect();
    let mut conflicts = Vec::new();
    for (x, a) in members.iter().enumerate() {
        for b in &members[x + 1..] {
            conflicts.push(ConflictPair {
                a: a.id,
                b: b.id,
                conflict_id: conflicts.len(),
                location: Vec2::ZERO,
                speed_a: a.speed,
                speed_b: b.speed,
                distance_a: a.distance,
                distance_b: b.distance,
                eta_a: a.eta,
                eta_b: b.eta,
            });
        }
    }
    NegotiationContext {
        members,
        conflicts,
        following: Vec::new(),
        agreed: Vec::new(),
        feedback: Vec::new(),
    }
}

/// Independent check of an order against a participant set and
/// leader-follower relations.
pub fn order_is_valid(order: &[VehicleId], group: &[VehicleId], following: &[FollowingRelation]) -> bool {
    let mut a = order.to_vec();
    let mut b = group.to_vec();
    a.sort();
    b.sort();
    if a != b {
        return false;
    }
    let pos = |v: VehicleId| order.iter().position(|x| *x == v);
    following.iter().all(|r| match (pos(r.leader), pos(r.follower)) {
        (Some(l), Some(f)) => l < f,
        _ => true,
    })
}

pub fn is_subsequence(small: &[VehicleId], big: &[VehicleId]) -> bool {
    let mut it = big.iter();
    small.iter().all(|x| it.any(|y| y == x))
}

/// One scripted HTTP reply.
#[derive(Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn chat(content: &str) -> Reply {
        Reply {
            status: 200,
            body: serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string(),
        }
    }

    pub fn status(status: u16) -> Reply {
        Reply {
            status,
            body: r#"{"error":"scripted"}"#.to_string(),
        }
    }
}

/// Recorded request: authorization header and parsed JSON body.
#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub method: String,
    pub authorization: Option<String>,
    pub content_type: Option<String>,
    pub body: serde_json::Value,
}

/// Local chat endpoint that answers from a script, then with 500.
pub struct MockServer {
    pub url: String,
    pub seen: Arc<Mutex<Vec<SeenRequest>>>,
    server: Arc<tiny_http::Server>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    pub fn start(script: Vec<Reply>) -> MockServer {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind mock server"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let (srv, log) = (Arc::clone(&server), Arc::clone(&seen));
        let handle = std::thread::spawn(move || {
            let mut script = script.into_iter();
            for mut request in srv.incoming_requests() {
                let header = |req: &tiny_http::Request, name: &'static str| {
                    req.headers()
                        .iter()
                        .find(|h| h.field.equiv(name))
                        .map(|h| h.value.as_str().to_string())
                };
                let authorization = header(&request, "Authorization");
                let content_type = header(&request, "Content-Type");
                let mut text = String::new();
                let _ = request.as_reader().read_to_string(&mut text);
                log.lock().unwrap().push(SeenRequest {
                    method: request.method().to_string(),
                    authorization,
                    content_type,
                    body: serde_json::from_str(&text).unwrap_or(serde_json::Value::Null),
                });
                let reply = script.next().unwrap_or_else(|| Reply::status(500));
                let response = tiny_http::Response::from_string(reply.body).with_status_code(reply.status);
                let _ = request.respond(response);
            }
        });
        MockServer {
            url: format!("http://127.0.0.1:{port}/v1/chat/completions"),
            seen,
            server,
            handle: Some(handle),
        }
    }

    pub fn requests(&self) -> Vec<SeenRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}


/// Whether some single order keeps every intra order and every
/// leader-follower relation, by Kahn's algorithm on their union.
pub fn jointly_feasible(intra: &[Vec<VehicleId>], following: &[FollowingRelation]) -> bool {
    let nodes: BTreeSet<VehicleId> = intra.iter().flatten().copied().collect();
    let mut edges: BTreeSet<(VehicleId, VehicleId)> = intra.iter().flat_map(|o| o.windows(2).map(|w| (w[0], w[1]))).collect();
    edges.extend(
        following
            .iter()
            .filter(|r| nodes.contains(&r.leader) && nodes.contains(&r.follower))
            .map(|r| (r.leader, r.follower)),
    );
    let mut remaining = nodes;
    loop {
        let source = remaining
            .iter()
            .copied()
            .find(|v| !edges.iter().any(|(a, b)| b == v && remaining.contains(a)));
        match source {
            Some(v) => {
                remaining.remove(&v);
            }
            None => return remaining.is_empty(),
        }
    }
}
