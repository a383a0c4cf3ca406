/// Compressed sparse row adjacency. Row `v` lists the neighbours of `v`
/// in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Csr {
    /// Builds a symmetric CSR from undirected pairs stored once each.
    pub fn from_undirected(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..num_nodes].to_vec();
        let mut indices = vec![0usize; offsets[num_nodes]];
        for &(u, v) in edges {
            indices[cursor[u]] = v;
            cursor[u] += 1;
            indices[cursor[v]] = u;
            cursor[v] += 1;
        }
        for v in 0..num_nodes {
            indices[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Csr { offsets, indices }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of directed adjacency entries (twice the undirected edge count).
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.indices[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.num_nodes()).all(|u| {
            self.neighbors(u)
                .iter()
                .all(|&v| self.neighbors(v).binary_search(&u).is_ok())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_graph() {
        let csr = Csr::from_undirected(3, &[(0, 1), (1, 2)]);
        assert_eq!(csr.nnz(), 4);
        assert_eq!(csr.neighbors(1), &[0, 2]);
        assert_eq!(csr.degree(0), 1);
        assert!(csr.is_symmetric());
    }
}
