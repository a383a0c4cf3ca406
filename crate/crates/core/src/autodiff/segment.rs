use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Csr;

/// Entries of a neighbourhood aggregation, grouped by target node. Every
/// target group starts with its self entry, followed by the neighbours.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentIndex {
    targets: Vec<usize>,
    sources: Vec<usize>,
    offsets: Vec<usize>,
}

impl SegmentIndex {
    /// `N(i) ∪ {i}` for every node of the adjacency.
    pub fn with_self_loops(csr: &Csr) -> Self {
        let n = csr.num_nodes();
        let mut targets = Vec::with_capacity(csr.nnz() + n);
        let mut sources = Vec::with_capacity(csr.nnz() + n);
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for t in 0..n {
            targets.push(t);
            sources.push(t);
            for &s in csr.neighbors(t) {
                targets.push(t);
                sources.push(s);
            }
            offsets.push(targets.len());
        }
        SegmentIndex {
            targets,
            sources,
            offsets,
        }
    }

    /// Arbitrary entry lists. Entries must be sorted by target and every
    /// target in `0..num_targets` must own at least one entry.
    pub fn new(num_targets: usize, targets: Vec<usize>, sources: Vec<usize>) -> Result<Self> {
        if targets.len() != sources.len() {
            return Err(Error::shape(
                "segment_index",
                "targets and sources differ in length",
            ));
        }
        if targets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::shape(
                "segment_index",
                "entries not sorted by target",
            ));
        }
        if targets.iter().chain(&sources).any(|&v| v >= num_targets) {
            return Err(Error::shape("segment_index", "node id out of range"));
        }
        let mut offsets = vec![0usize; num_targets + 1];
        for &t in &targets {
            offsets[t + 1] += 1;
        }
        for t in 0..num_targets {
            if offsets[t + 1] == 0 {
                return Err(Error::shape(
                    "segment_index",
                    format!("target {t} has an empty group"),
                ));
            }
            offsets[t + 1] += offsets[t];
        }
        Ok(SegmentIndex {
            targets,
            sources,
            offsets,
        })
    }

    pub fn num_targets(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn group(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    /// Entries per target.
    pub fn group_sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Drops each non-self entry independently with probability `p`.
    pub fn drop_entries(&self, p: f64, rng: &mut impl Rng) -> SegmentIndex {
        if p <= 0.0 {
            return self.clone();
        }
        let mut targets = Vec::with_capacity(self.len());
        let mut sources = Vec::with_capacity(self.len());
        let mut offsets = Vec::with_capacity(self.offsets.len());
        offsets.push(0);
        for t in 0..self.num_targets() {
            for e in self.group(t) {
                let s = self.sources[e];
                if s == t || rng.random::<f64>() >= p {
                    targets.push(t);
                    sources.push(s);
                }
            }
            offsets.push(targets.len());
        }
        SegmentIndex {
            targets,
            sources,
            offsets,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_loops_lead_each_group() {
        let csr = Csr::from_undirected(3, &[(0, 1), (1, 2)]);
        let idx = SegmentIndex::with_self_loops(&csr);
        assert_eq!(idx.len(), 7);
        assert_eq!(idx.targets(), &[0, 0, 1, 1, 1, 2, 2]);
        assert_eq!(idx.sources(), &[0, 1, 1, 0, 2, 2, 1]);
        assert_eq!(idx.group_sizes(), vec![2, 3, 2]);
    }

    #[test]
    fn drop_keeps_self_entries() {
        let csr = Csr::from_undirected(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        let idx = SegmentIndex::with_self_loops(&csr);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = idx.drop_entries(1.0, &mut rng);
        assert_eq!(all.len(), 4);
        assert!(all.targets().iter().zip(all.sources()).all(|(t, s)| t == s));
        assert_eq!(idx.drop_entries(0.0, &mut rng), idx);
    }

    #[test]
    fn validation() {
        assert!(SegmentIndex::new(2, vec![1, 0], vec![0, 1]).is_err());
        assert!(SegmentIndex::new(2, vec![0, 0], vec![0, 1]).is_err());
        assert!(SegmentIndex::new(2, vec![0, 1], vec![0, 3]).is_err());
        assert!(SegmentIndex::new(2, vec![0, 1], vec![1, 0]).is_ok());
    }
}
