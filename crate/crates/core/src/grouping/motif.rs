//! Weighted motif adjacency over small directed motifs.

use super::GroupingError;
use nalgebra::DMatrix;
use std::collections::HashSet;

/// A small directed pattern with the node positions whose images become
/// similar to one another in the motif adjacency matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Motif {
    pub name: &'static str,
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub anchors: Vec<usize>,
}

const U: usize = 0;
const V: usize = 1;
const W: usize = 2;

fn triad(name: &'static str, edges: &[(usize, usize)]) -> Motif {
    Motif {
        name,
        node_count: 3,
        edges: edges.to_vec(),
        anchors: vec![U, V, W],
    }
}

impl Motif {
    /// Single directed edge.
    pub fn single_edge() -> Motif {
        Motif {
            name: "Ms",
            node_count: 2,
            edges: vec![(0, 1)],
            anchors: vec![0, 1],
        }
    }

    /// Reciprocated edge pair.
    pub fn double_edge() -> Motif {
        Motif {
            name: "Md",
            node_count: 2,
            edges: vec![(0, 1), (1, 0)],
            anchors: vec![0, 1],
        }
    }

    /// The thirteen connected three-node directed motifs.
    pub fn triads() -> Vec<Motif> {
        vec![
            triad("M1", &[(U, V), (V, W), (W, U)]),
            triad("M2", &[(U, V), (V, U), (V, W), (W, U)]),
            triad("M3", &[(U, V), (V, U), (V, W), (W, V), (W, U)]),
            triad("M4", &[(U, V), (V, U), (V, W), (W, V), (U, W), (W, U)]),
            triad("M5", &[(U, V), (V, W), (U, W)]),
            triad("M6", &[(U, V), (U, W), (V, W), (W, V)]),
            triad("M7", &[(V, U), (W, U), (V, W), (W, V)]),
            triad("M8", &[(U, V), (U, W)]),
            triad("M9", &[(W, U), (U, V)]),
            triad("M10", &[(V, U), (W, U)]),
            triad("M11", &[(U, V), (V, U), (U, W)]),
            triad("M12", &[(U, V), (V, U), (W, U)]),
            triad("M13", &[(U, V), (V, U), (U, W), (W, U)]),
        ]
    }

    pub fn catalog() -> Vec<Motif> {
        let mut all = vec![Motif::single_edge(), Motif::double_edge()];
        all.extend(Motif::triads());
        all
    }

    pub fn by_name(name: &str) -> Result<Motif, GroupingError> {
        Motif::catalog()
            .into_iter()
            .find(|m| m.name == name)
            .ok_or_else(|| GroupingError::UnknownMotif(name.to_string()))
    }

    /// Same motif restricted to a different anchor set.
    pub fn with_anchors(mut self, anchors: &[usize]) -> Motif {
        self.anchors = anchors.to_vec();
        self
    }

    fn validate(&self) -> Result<(), GroupingError> {
        if !(2..=3).contains(&self.node_count) {
            return Err(GroupingError::MotifArityUnsupported(self.node_count));
        }
        let anchors_ok = self.anchors.len() >= 2
            && self.anchors.iter().all(|a| *a < self.node_count)
            && self.anchors.iter().collect::<HashSet<_>>().len() == self.anchors.len();
        let edges_ok = !self.edges.is_empty()
            && self
                .edges
                .iter()
                .all(|&(a, b)| a != b && a < self.node_count && b < self.node_count);
        if anchors_ok && edges_ok {
            Ok(())
        } else {
            Err(GroupingError::MalformedMotif(self.name.to_string()))
        }
    }
}

fn injective_maps(n: usize, m: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(n: usize, m: usize, cur: &mut Vec<usize>, used: &mut [bool], f: &mut impl FnMut(&[usize])) {
        if cur.len() == m {
            f(cur);
            return;
        }
        for x in 0..n {
            if !used[x] {
                used[x] = true;
                cur.push(x);
                rec(n, m, cur, used, f);
                cur.pop();
                used[x] = false;
            }
        }
    }
    rec(n, m, &mut Vec::with_capacity(m), &mut vec![false; n], f);
}

/// Motif adjacency matrix of the weighted digraph `w`.
///
/// Every distinct motif instance (functional match: extra graph edges are
/// allowed) adds the mean weight of its mapped edges to each pair of anchor
/// images, in both directions.
pub fn motif_adjacency(w: &DMatrix<f64>, motif: &Motif) -> Result<DMatrix<f64>, GroupingError> {
    motif.validate()?;
    let n = w.nrows();
    let mut m = DMatrix::zeros(n, n);
    let mut seen: HashSet<Vec<(usize, usize)>> = HashSet::new();
    let size = motif.edges.len() as f64;
    injective_maps(n, motif.node_count, &mut |map| {
        let mut image: Vec<(usize, usize)> = motif.edges.iter().map(|&(a, b)| (map[a], map[b])).collect();
        if image.iter().any(|&(a, b)| w[(a, b)] <= 0.0) {
            return;
        }
        image.sort_unstable();
        // Anchor images are part of the identity of an instance so that
        // partial anchor sets are not merged across distinct anchorings.
        let mut anchor_key: Vec<usize> = motif.anchors.iter().map(|&a| map[a]).collect();
        anchor_key.sort_unstable();
        image.push((usize::MAX, anchor_key.len()));
        image.extend(anchor_key.iter().map(|&a| (usize::MAX, a)));
        if !seen.insert(image) {
            return;
        }
        let total: f64 = motif.edges.iter().map(|&(a, b)| w[(map[a], map[b])]).sum();
        let g = total / size;
        for (x, &ax) in anchor_key.iter().enumerate() {
            for &ay in &anchor_key[x + 1..] {
                m[(ax, ay)] += g;
                m[(ay, ax)] += g;
            }
        }
    });
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_on_two_nodes() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.6, 0.2, 0.0]);
        let m = motif_adjacency(&w, &Motif::single_edge()).unwrap();
        assert!((m[(0, 1)] - 0.8).abs() < 1e-15);
        assert!((m[(1, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(m[(0, 0)], 0.0);
    }

    #[test]
    fn path_motif_on_chain() {
        let mut w = DMatrix::zeros(3, 3);
        w[(0, 1)] = 0.5;
        w[(1, 2)] = 0.4;
        let m = motif_adjacency(&w, &Motif::by_name("M9").unwrap()).unwrap();
        assert!((m[(0, 2)] - 0.45).abs() < 1e-15);
        assert!((m[(2, 0)] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn empty_graph_gives_zero() {
        let w = DMatrix::zeros(4, 4);
        for motif in Motif::catalog() {
            assert_eq!(motif_adjacency(&w, &motif).unwrap(), DMatrix::zeros(4, 4));
        }
    }

    #[test]
    fn catalog_is_well_formed() {
        let cat = Motif::catalog();
        assert_eq!(cat.len(), 15);
        for m in &cat {
            m.validate().unwrap();
        }
        let names: HashSet<_> = cat.iter().map(|m| m.name).collect();
        assert_eq!(names.len(), 15);
    }

    #[test]
    fn unsupported_arity() {
        let m = Motif {
            name: "quad",
            node_count: 4,
            edges: vec![(0, 1)],
            anchors: vec![0, 1],
        };
        assert_eq!(
            motif_adjacency(&DMatrix::zeros(4, 4), &m),
            Err(GroupingError::MotifArityUnsupported(4))
        );
        assert!(matches!(Motif::by_name("M99"), Err(GroupingError::UnknownMotif(_))));
    }
}
