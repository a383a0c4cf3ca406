//! Graph data model and the structural analyses run on it.

mod bundle;
mod csr;
mod edges;
mod homophily;
mod sbm;
mod split;

use std::collections::BTreeSet;
use std::sync::Arc;

pub use bundle::{load_graph_bundle, write_graph_bundle, LoadedBundle};
pub use csr::Csr;
pub use edges::{
    filter_edges, partition_edges, EdgeClass, EdgeClasses, EdgePartition, FilteredGraph,
};
pub use homophily::{identity_homophily, node_homophily};
pub use sbm::{sbm_generate, SbmSpec};
pub use split::{make_splits, SplitAssignment, SplitRole};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Identity flag for in-distribution nodes.
pub const ID: u8 = 0;
/// Identity flag for out-of-distribution nodes.
pub const OOD: u8 = 1;

/// Counts of edges discarded while normalising an edge list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeCleanup {
    pub self_loops: usize,
    pub duplicates: usize,
}

/// Undirected attributed graph with class labels and ID/OOD identities.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    csr: Csr,
    features: Arc<Matrix>,
    labels: Arc<Vec<usize>>,
    identity: Arc<Vec<u8>>,
    num_classes: usize,
    ood_classes: Vec<usize>,
}

impl Graph {
    /// Builds a graph, dropping self loops and repeated undirected pairs.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        ood_classes: &[usize],
    ) -> Result<(Self, EdgeCleanup)> {
        let num_nodes = labels.len();
        if features.rows() != num_nodes {
            return Err(Error::Graph(format!(
                "feature matrix has {} rows but there are {} labels",
                features.rows(),
                num_nodes
            )));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let ood = validate_ood_classes(ood_classes, num_classes)?;
        let (edges, cleanup) = normalize_edges(num_nodes, edges)?;
        let identity = labels
            .iter()
            .map(|y| if ood.contains(y) { OOD } else { ID })
            .collect();
        let csr = Csr::from_undirected(num_nodes, &edges);
        Ok((
            Graph {
                num_nodes,
                edges,
                csr,
                features: Arc::new(features),
                labels: Arc::new(labels),
                identity: Arc::new(identity),
                num_classes,
                ood_classes: ood.into_iter().collect(),
            },
            cleanup,
        ))
    }

    /// Same nodes, features and labels with a different (already clean) edge list.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Graph {
        let csr = Csr::from_undirected(self.num_nodes, &edges);
        Graph {
            edges,
            csr,
            ..self.clone()
        }
    }

    /// Same structure with features scaled so every nonzero row sums to one.
    pub fn row_normalized(&self) -> Graph {
        let mut x = (*self.features).clone();
        let cols = x.cols();
        for r in 0..x.rows() {
            let row = &mut x.data_mut()[r * cols..(r + 1) * cols];
            let s: f64 = row.iter().sum();
            if s != 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        Graph {
            features: Arc::new(x),
            ..self.clone()
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Undirected edges, each stored once with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn csr(&self) -> &Csr {
        &self.csr
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn identity(&self) -> &[u8] {
        &self.identity
    }

    pub fn is_ood(&self, v: usize) -> bool {
        self.identity[v] == OOD
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ood_classes(&self) -> &[usize] {
        &self.ood_classes
    }

    /// In-distribution classes in ascending order; model outputs index this list.
    pub fn id_classes(&self) -> Vec<usize> {
        (0..self.num_classes)
            .filter(|c| !self.ood_classes.contains(c))
            .collect()
    }

    /// Maps each original label to its position among the ID classes.
    pub fn local_labels(&self) -> Vec<Option<usize>> {
        let ids = self.id_classes();
        self.labels
            .iter()
            .map(|y| ids.iter().position(|c| c == y))
            .collect()
    }
}

fn validate_ood_classes(ood_classes: &[usize], num_classes: usize) -> Result<BTreeSet<usize>> {
    if ood_classes.is_empty() {
        return Err(Error::Graph("ood_classes empty".into()));
    }
    let set: BTreeSet<usize> = ood_classes.iter().copied().collect();
    if let Some(c) = set.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Graph(format!(
            "ood class {c} unknown (labels span 0..{num_classes})"
        )));
    }
    if set.len() == num_classes {
        return Err(Error::Graph(
            "every class is marked OOD; no ID classes left".into(),
        ));
    }
    Ok(set)
}

fn normalize_edges(
    num_nodes: usize,
    edges: impl IntoIterator<Item = (usize, usize)>,
) -> Result<(Vec<(usize, usize)>, EdgeCleanup)> {
    let mut cleanup = EdgeCleanup::default();
    let mut out = Vec::new();
    for (u, v) in edges {
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::Graph(format!(
                "edge ({u}, {v}) references a node outside 0..{num_nodes}"
            )));
        }
        if u == v {
            cleanup.self_loops += 1;
            continue;
        }
        out.push((u.min(v), u.max(v)));
    }
    out.sort_unstable();
    let before = out.len();
    out.dedup();
    cleanup.duplicates = before - out.len();
    Ok((out, cleanup))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_loops_and_duplicates_are_dropped() {
        let x = Matrix::zeros(3, 1);
        let (g, cleanup) = Graph::new(x, vec![0, 1, 1], [(0, 1), (1, 0), (2, 2)], &[1]).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(
            cleanup,
            EdgeCleanup {
                self_loops: 1,
                duplicates: 1
            }
        );
        assert_eq!(g.csr().nnz(), 2);
        assert_eq!(g.identity(), &[ID, OOD, OOD]);
    }

    #[test]
    fn ood_class_validation() {
        let x = || Matrix::zeros(2, 1);
        assert!(
            matches!(Graph::new(x(), vec![0, 1], [], &[]), Err(Error::Graph(m)) if m.contains("empty"))
        );
        assert!(Graph::new(x(), vec![0, 1], [], &[5]).is_err());
        assert!(Graph::new(x(), vec![0, 1], [], &[0, 1]).is_err());
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        assert!(Graph::new(Matrix::zeros(2, 1), vec![0, 1], [(0, 2)], &[1]).is_err());
    }

    #[test]
    fn local_labels_index_id_classes() {
        let g = test_graphs::labeled(&[0, 1, 2, 3], &[], &[1]);
        assert_eq!(g.id_classes(), vec![0, 2, 3]);
        assert_eq!(g.local_labels(), vec![Some(0), None, Some(1), Some(2)]);
    }
}
