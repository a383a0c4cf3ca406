use super::Graph;
use crate::error::{Error, Result};

/// Mean over non-isolated nodes of the fraction of neighbours sharing the
/// node's label. Degree-0 nodes are left out of the average.
pub fn node_homophily<L: PartialEq>(graph: &Graph, node_labels: &[L]) -> Result<f64> {
    if node_labels.len() != graph.num_nodes() {
        return Err(Error::Graph(format!(
            "label vector has {} entries for {} nodes",
            node_labels.len(),
            graph.num_nodes()
        )));
    }
    let csr = graph.csr();
    let mut total = 0.0;
    let mut counted = 0usize;
    for v in 0..graph.num_nodes() {
        let nbrs = csr.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let same = nbrs
            .iter()
            .filter(|&&u| node_labels[u] == node_labels[v])
            .count();
        total += same as f64 / nbrs.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Graph(
            "homophily undefined: every node is isolated".into(),
        ));
    }
    Ok(total / counted as f64)
}

/// Homophily of the graph's class labels pushed through `class_to_identity`.
pub fn identity_homophily(graph: &Graph, class_to_identity: &[u8]) -> Result<f64> {
    let mapped = graph
        .labels()
        .iter()
        .map(|&y| {
            class_to_identity
                .get(y)
                .copied()
                .ok_or_else(|| Error::Graph(format!("identity mapping undefined for class {y}")))
        })
        .collect::<Result<Vec<u8>>>()?;
    node_homophily(graph, &mapped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_graphs::labeled;

    const TRIANGLE: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

    #[test]
    fn triangle_examples() {
        let g = labeled(&[0, 0, 1], &TRIANGLE, &[1]);
        let h = node_homophily(&g, g.labels()).unwrap();
        assert!((h - 1.0 / 3.0).abs() < 1e-15);

        let g = labeled(&[0, 1, 2], &TRIANGLE, &[2]);
        assert_eq!(node_homophily(&g, g.labels()).unwrap(), 0.0);
        let hp = identity_homophily(&g, &[0, 0, 1]).unwrap();
        assert!((hp - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(identity_homophily(&g, &[1, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn uniform_labels_give_one() {
        let g = labeled(&[0, 0, 0, 1], &[(0, 1), (1, 2)], &[1]);
        assert_eq!(node_homophily(&g, &[3, 3, 3, 3]).unwrap(), 1.0);
    }

    #[test]
    fn identity_map_on_binary_labels_matches_node_homophily() {
        let g = labeled(
            &[0, 1, 1, 0, 1],
            &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)],
            &[1],
        );
        assert_eq!(
            identity_homophily(&g, &[0, 1]).unwrap(),
            node_homophily(&g, g.labels()).unwrap()
        );
    }

    #[test]
    fn errors() {
        let g = labeled(&[0, 1, 2], &TRIANGLE, &[2]);
        assert!(node_homophily(&g, &[0, 1]).is_err());
        assert!(identity_homophily(&g, &[0, 1]).is_err());
        let isolated = labeled(&[0, 1], &[], &[1]);
        assert!(node_homophily(&isolated, isolated.labels()).is_err());
    }
}
