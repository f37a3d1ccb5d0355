//! Division of vehicles into cooperative groups.
//!
//! Cumulative influence is turned into a symmetric motif adjacency matrix,
//! split into connected components, and each larger component is clustered
//! spectrally with the cluster count chosen by silhouette.

pub mod kmeans;
pub mod motif;
pub mod spectral;

pub use kmeans::{kmeans_pp, silhouette};
pub use motif::{motif_adjacency, Motif};
pub use spectral::{random_walk_laplacian, spectral_embedding, RandomWalkLaplacian};

use crate::config::GroupingConfig;
use crate::domain::VehicleId;
use crate::influence::{augment_following, normalize_matrix, CumulativeInfluenceMatrix, FollowingRelation};
use crate::rng::seeded_rng;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupingError {
    #[error("motifs with {0} nodes are not supported")]
    MotifArityUnsupported(usize),
    #[error("unknown motif {0:?}")]
    UnknownMotif(String),
    #[error("motif {0:?} has invalid edges or anchors")]
    MalformedMotif(String),
    #[error("node {0} has zero degree")]
    IsolatedNode(usize),
    #[error("eigen-solver did not converge")]
    EigenFailure,
    #[error("cluster count {k} is invalid for {n} points")]
    InvalidClusterCount { k: usize, n: usize },
    #[error("silhouette needs at least two clusters")]
    UndefinedSilhouette,
}

/// Exhaustive, disjoint vehicle groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub groups: Vec<Vec<VehicleId>>,
    pub assignment: BTreeMap<VehicleId, usize>,
}

impl GroupPartition {
    /// Builds a partition with groups sorted internally and ordered by their
    /// smallest member.
    pub fn from_groups(mut groups: Vec<Vec<VehicleId>>) -> GroupPartition {
        groups.retain(|g| !g.is_empty());
        for g in &mut groups {
            g.sort();
        }
        groups.sort();
        let assignment = groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| g.iter().map(move |v| (*v, gi)))
            .collect();
        GroupPartition { groups, assignment }
    }

    pub fn singletons(ids: &[VehicleId]) -> GroupPartition {
        GroupPartition::from_groups(ids.iter().map(|v| vec![*v]).collect())
    }

    pub fn group_of(&self, id: VehicleId) -> Option<usize> {
        self.assignment.get(&id).copied()
    }

    /// Whether the groups exactly cover `ids` without overlap.
    pub fn is_partition_of(&self, ids: &[VehicleId]) -> bool {
        let total: usize = self.groups.iter().map(Vec::len).sum();
        let mut members: Vec<VehicleId> = self.groups.iter().flatten().copied().collect();
        members.sort();
        members.dedup();
        let mut want = ids.to_vec();
        want.sort();
        want.dedup();
        total == members.len() && members == want && self.groups.iter().all(|g| !g.is_empty())
    }
}

/// Silhouette scores tried for one connected component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub members: Vec<VehicleId>,
    pub scores: Vec<(usize, f64)>,
    pub chosen_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingOutcome {
    pub partition: GroupPartition,
    pub similarity: DMatrix<f64>,
    pub components: Vec<ComponentReport>,
}

fn components(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(x) = stack.pop() {
            comp.push(x);
            for y in 0..n {
                if !seen[y] && m[(x, y)] > 0.0 {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Partitions the vehicles of `f` into groups.
///
/// Rows are processed in vehicle-id order, so the outcome does not depend on
/// the order of rows in `f`. `following` feeds the car-following
/// augmentation when it is enabled in `config`.
pub fn divide_groups(
    f: &CumulativeInfluenceMatrix,
    following: &[FollowingRelation],
    config: &GroupingConfig,
    seed: u64,
) -> Result<GroupingOutcome, GroupingError> {
    let motif = Motif::by_name(&config.motif)?;
    let n = f.ids.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by_key(|&i| f.ids[i]);
    let ids: Vec<VehicleId> = perm.iter().map(|&i| f.ids[i]).collect();
    let mut w = normalize_matrix(&submatrix(&f.f, &perm));
    w.fill_diagonal(0.0);
    if config.car_following_augmentation {
        augment_following(&mut w, &ids, following, config.following_gap);
    }
    let m = motif_adjacency(&w, &motif)?;

    let mut groups = Vec::new();
    let mut reports = Vec::new();
    for (ci, comp) in components(&m).into_iter().enumerate() {
        let members: Vec<VehicleId> = comp.iter().map(|&i| ids[i]).collect();
        if comp.len() <= 2 {
            reports.push(ComponentReport {
                members: members.clone(),
                scores: Vec::new(),
                chosen_k: 1,
            });
            groups.push(members);
            continue;
        }
        let sub = submatrix(&m, &comp);
        let laplacian = random_walk_laplacian(&sub)?;
        let k_hi = (comp.len() - 1).min(config.k_max);
        let mut scores = Vec::new();
        let mut best: Option<(f64, Vec<usize>, usize)> = None;
        for k in 2..=k_hi {
            let emb = spectral_embedding(&laplacian, k, config.row_normalize)?;
            let mut rng = seeded_rng(seed, &format!("kmeans/{ci}/{k}"));
            let labels = kmeans_pp(&emb, k, &mut rng)?;
            let Ok(score) = silhouette(&emb, &labels) else { continue };
            scores.push((k, score));
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, labels, k));
            }
        }
        match best {
            Some((score, labels, k)) if score >= config.s_min => {
                let count = labels.iter().max().map_or(0, |m| m + 1);
                let mut split = vec![Vec::new(); count];
                for (pos, &l) in labels.iter().enumerate() {
                    split[l].push(members[pos]);
                }
                groups.extend(split);
                reports.push(ComponentReport {
                    members,
                    scores,
                    chosen_k: k,
                });
            }
            _ => {
                reports.push(ComponentReport {
                    members: members.clone(),
                    scores,
                    chosen_k: 1,
                });
                groups.push(members);
            }
        }
    }
    Ok(GroupingOutcome {
        partition: GroupPartition::from_groups(groups),
        similarity: m,
        components: reports,
    })
}
