use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Graph;

/// Kind of an undirected edge with respect to its endpoints' identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeClass {
    IntraId,
    IntraOod,
    Inter,
}

/// Indices into `Graph::edges`, split by edge class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgePartition {
    pub intra_id: Vec<usize>,
    pub intra_ood: Vec<usize>,
    pub inter: Vec<usize>,
}

impl EdgePartition {
    pub fn class(&self, class: EdgeClass) -> &[usize] {
        match class {
            EdgeClass::IntraId => &self.intra_id,
            EdgeClass::IntraOod => &self.intra_ood,
            EdgeClass::Inter => &self.inter,
        }
    }
}

/// Set of edge classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeClasses {
    pub intra_id: bool,
    pub intra_ood: bool,
    pub inter: bool,
}

impl EdgeClasses {
    pub const ALL: EdgeClasses = EdgeClasses {
        intra_id: true,
        intra_ood: true,
        inter: true,
    };
    pub const INTRA: EdgeClasses = EdgeClasses {
        intra_id: true,
        intra_ood: true,
        inter: false,
    };
    pub const INTRA_ID: EdgeClasses = EdgeClasses {
        intra_id: true,
        intra_ood: false,
        inter: false,
    };
    pub const INTRA_OOD: EdgeClasses = EdgeClasses {
        intra_id: false,
        intra_ood: true,
        inter: false,
    };
    pub const NONE: EdgeClasses = EdgeClasses {
        intra_id: false,
        intra_ood: false,
        inter: false,
    };

    pub fn contains(self, class: EdgeClass) -> bool {
        match class {
            EdgeClass::IntraId => self.intra_id,
            EdgeClass::IntraOod => self.intra_ood,
            EdgeClass::Inter => self.inter,
        }
    }
}

pub fn partition_edges(graph: &Graph) -> EdgePartition {
    let mut p = EdgePartition::default();
    for (i, &(u, v)) in graph.edges().iter().enumerate() {
        match (graph.is_ood(u), graph.is_ood(v)) {
            (false, false) => p.intra_id.push(i),
            (true, true) => p.intra_ood.push(i),
            _ => p.inter.push(i),
        }
    }
    p
}

/// Result of [`filter_edges`]; `edgeless` flags a graph with no edges left.
#[derive(Debug, Clone)]
pub struct FilteredGraph {
    pub graph: Graph,
    pub edgeless: bool,
}

/// Keeps every edge of a class in `keep`; for the other classes drops
/// `round(removal_fraction * count)` edges chosen uniformly under `seed`.
pub fn filter_edges(
    graph: &Graph,
    keep: EdgeClasses,
    removal_fraction: f64,
    seed: u64,
) -> FilteredGraph {
    let fraction = removal_fraction.clamp(0.0, 1.0);
    let partition = partition_edges(graph);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![true; graph.edges().len()];
    for class in [EdgeClass::IntraId, EdgeClass::IntraOod, EdgeClass::Inter] {
        if keep.contains(class) {
            continue;
        }
        let mut members = partition.class(class).to_vec();
        let drop = (fraction * members.len() as f64).round() as usize;
        members.shuffle(&mut rng);
        for &i in &members[..drop] {
            kept[i] = false;
        }
    }
    let edges: Vec<_> = graph
        .edges()
        .iter()
        .zip(&kept)
        .filter(|(_, &k)| k)
        .map(|(&e, _)| e)
        .collect();
    let edgeless = edges.is_empty();
    FilteredGraph {
        graph: graph.with_edges(edges),
        edgeless,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_graphs::labeled;

    fn path() -> Graph {
        // identities [0, 0, 1]
        labeled(&[0, 0, 1], &[(0, 1), (1, 2)], &[1])
    }

    #[test]
    fn path_partition() {
        let p = partition_edges(&path());
        assert_eq!(p.intra_id, vec![0]);
        assert_eq!(p.inter, vec![1]);
        assert!(p.intra_ood.is_empty());
    }

    #[test]
    fn all_id_graph_has_no_inter_edges() {
        let g = labeled(&[0, 1, 0, 2], &[(0, 1), (1, 2), (2, 0)], &[2]);
        let p = partition_edges(&g);
        assert!(p.inter.is_empty() && p.intra_ood.is_empty());
        assert_eq!(p.intra_id.len(), 3);
    }

    #[test]
    fn removing_inter_edges() {
        let g = path();
        let same = filter_edges(&g, EdgeClasses::INTRA, 0.0, 1);
        assert_eq!(same.graph.edges(), g.edges());
        let cut = filter_edges(&g, EdgeClasses::INTRA, 1.0, 1);
        assert_eq!(cut.graph.edges(), &[(0, 1)]);
        assert!(!cut.edgeless);
        let none = filter_edges(&g, EdgeClasses::NONE, 1.0, 1);
        assert!(none.edgeless);
    }
}
