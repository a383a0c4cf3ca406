use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Planted-partition graph with Gaussian class-conditional features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    pub class_mean_separation: f64,
    pub ood_classes: Vec<usize>,
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("sbm: {m}")));
        if self.classes == 0 || self.nodes_per_class == 0 {
            return bad("needs at least one class and one node per class".into());
        }
        for p in [self.p_intra, self.p_inter] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("edge probability {p} outside [0, 1]"));
            }
        }
        if self.p_intra < self.p_inter {
            return bad("p_intra < p_inter".into());
        }
        if self.feature_dim < self.classes {
            return bad("feature_dim must be at least the number of classes".into());
        }
        if self.class_mean_separation < 0.0 {
            return bad("class_mean_separation must be non-negative".into());
        }
        if self.ood_classes.is_empty()
            || self.ood_classes.len() >= self.classes
            || self.ood_classes.iter().any(|&c| c >= self.classes)
        {
            return bad("ood_classes must be a proper nonempty subset of the classes".into());
        }
        Ok(())
    }
}

/// Nodes are numbered class by class. Node features are
/// `separation * e_class + N(0, I)`.
pub fn sbm_generate(spec: &SbmSpec, seed: u64) -> Result<Graph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.classes * spec.nodes_per_class;
    let labels: Vec<usize> = (0..n).map(|v| v / spec.nodes_per_class).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] {
                spec.p_intra
            } else {
                spec.p_inter
            };
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let mut x = Matrix::zeros(n, spec.feature_dim);
    for (v, &label) in labels.iter().enumerate() {
        for j in 0..spec.feature_dim {
            let noise: f64 = rng.sample(StandardNormal);
            let mean = if j == label {
                spec.class_mean_separation
            } else {
                0.0
            };
            x.set(v, j, mean + noise);
        }
    }
    Ok(Graph::new(x, labels, edges, &spec.ood_classes)?.0)
}
