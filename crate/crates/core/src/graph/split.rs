use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
            SplitRole::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitRole::Train),
            "val" => Some(SplitRole::Val),
            "test" => Some(SplitRole::Test),
            _ => None,
        }
    }
}

/// Disjoint train / validation / test node masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

impl SplitAssignment {
    pub(crate) fn from_roles(
        num_nodes: usize,
        roles: impl IntoIterator<Item = (usize, SplitRole)>,
    ) -> Self {
        let mut s = SplitAssignment {
            train_mask: vec![false; num_nodes],
            val_mask: vec![false; num_nodes],
            test_mask: vec![false; num_nodes],
        };
        for (v, role) in roles {
            s.train_mask[v] = role == SplitRole::Train;
            s.val_mask[v] = role == SplitRole::Val;
            s.test_mask[v] = role == SplitRole::Test;
        }
        s
    }

    pub fn len(&self) -> usize {
        self.train_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_mask.is_empty()
    }

    pub fn role(&self, v: usize) -> Option<SplitRole> {
        if self.train_mask[v] {
            Some(SplitRole::Train)
        } else if self.val_mask[v] {
            Some(SplitRole::Val)
        } else if self.test_mask[v] {
            Some(SplitRole::Test)
        } else {
            None
        }
    }

    pub fn train(&self) -> Vec<usize> {
        indices(&self.train_mask)
    }

    pub fn val(&self) -> Vec<usize> {
        indices(&self.val_mask)
    }

    pub fn test(&self) -> Vec<usize> {
        indices(&self.test_mask)
    }
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect()
}

/// Samples `n_train_per_class` training and `n_val_per_class` validation
/// nodes from every ID class, plus as many OOD validation nodes as ID
/// validation nodes in total. Everything else is test.
pub fn make_splits(
    graph: &Graph,
    n_train_per_class: usize,
    n_val_per_class: usize,
    seed: u64,
) -> Result<SplitAssignment> {
    let n = graph.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitAssignment {
        train_mask: vec![false; n],
        val_mask: vec![false; n],
        test_mask: vec![true; n],
    };
    let id_classes = graph.id_classes();
    for &c in &id_classes {
        let mut members: Vec<usize> = (0..n).filter(|&v| graph.labels()[v] == c).collect();
        if members.len() < n_train_per_class + n_val_per_class {
            return Err(Error::Population(format!(
                "class {c} has {} nodes, needs {}",
                members.len(),
                n_train_per_class + n_val_per_class
            )));
        }
        members.shuffle(&mut rng);
        for &v in &members[..n_train_per_class] {
            split.train_mask[v] = true;
            split.test_mask[v] = false;
        }
        for &v in &members[n_train_per_class..n_train_per_class + n_val_per_class] {
            split.val_mask[v] = true;
            split.test_mask[v] = false;
        }
    }
    let mut outliers: Vec<usize> = (0..n).filter(|&v| graph.is_ood(v)).collect();
    let n_ood_val = n_val_per_class * id_classes.len();
    if outliers.len() < n_ood_val {
        return Err(Error::Population(format!(
            "{} OOD nodes, validation needs {n_ood_val}",
            outliers.len()
        )));
    }
    outliers.shuffle(&mut rng);
    for &v in &outliers[..n_ood_val] {
        split.val_mask[v] = true;
        split.test_mask[v] = false;
    }
    Ok(split)
}
