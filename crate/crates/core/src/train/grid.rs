use serde::{Deserialize, Serialize};

use super::trainer::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::graph::{Graph, SplitAssignment};
use crate::nn::{GraphInput, Model, ModelConfig};

/// Cartesian hyperparameter space. Empty axes keep the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpace {
    #[serde(default)]
    pub lr: Vec<f64>,
    #[serde(default)]
    pub dropout: Vec<f64>,
    #[serde(default)]
    pub heads: Vec<usize>,
    #[serde(default)]
    pub weight_decay: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub dropout: f64,
    pub heads: usize,
    pub weight_decay: f64,
}

impl GridCell {
    pub fn apply(&self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let mut m = model.clone();
        m.dropout = self.dropout;
        m.heads = self.heads;
        let mut t = train.clone();
        t.lr = self.lr;
        t.weight_decay = self.weight_decay;
        (m, t)
    }
}

impl GridSpace {
    /// Cells in lexicographic (lr, dropout, heads, weight_decay) order.
    /// Heads collapse to the base value for models without attention.
    pub fn cells(&self, model: &ModelConfig, train: &TrainConfig) -> Vec<GridCell> {
        fn axis<T: Copy + PartialOrd>(v: &[T], base: T) -> Vec<T> {
            let mut out = if v.is_empty() { vec![base] } else { v.to_vec() };
            out.sort_by(|a, b| a.partial_cmp(b).expect("grid values are comparable"));
            out.dedup_by(|a, b| a == b);
            out
        }
        let heads = if model.architecture.is_attention() {
            axis(&self.heads, model.heads)
        } else {
            vec![model.heads]
        };
        let mut cells = Vec::new();
        for &lr in &axis(&self.lr, train.lr) {
            for &dropout in &axis(&self.dropout, model.dropout) {
                for &h in &heads {
                    for &weight_decay in &axis(&self.weight_decay, train.weight_decay) {
                        cells.push(GridCell {
                            lr,
                            dropout,
                            heads: h,
                            weight_decay,
                        });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub cell: GridCell,
    /// Mean best validation composite over runs.
    pub score: f64,
    pub run_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GridCell,
    /// Sorted by score, best first; ties keep lexicographic cell order.
    pub leaderboard: Vec<GridEntry>,
}

/// Trains every cell on every `(split, seed)` pair and ranks cells by mean
/// best validation composite.
pub fn grid_search(
    space: &GridSpace,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    graph: &Graph,
    splits: &[SplitAssignment],
    seeds: &[u64],
    exec_mode: Exec,
) -> Result<GridResult> {
    let cells = space.cells(model, train_cfg);
    if splits.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "grid search needs at least one split and one seed".into(),
        ));
    }
    let input = GraphInput::new(graph).with_exec(Exec::Sequential);
    let jobs: Vec<(usize, usize, u64)> = (0..cells.len())
        .flat_map(|c| {
            (0..splits.len()).flat_map(move |s| seeds.iter().map(move |&seed| (c, s, seed)))
        })
        .collect();
    let results = exec::map(exec_mode, &jobs, |&(c, s, seed)| -> Result<f64> {
        let (mc, mut tc) = cells[c].apply(model, train_cfg);
        tc.seed = seed;
        let m = Model::for_graph(mc, graph)?;
        let (_, history) = train(&m, graph, &input, &splits[s], &tc)?;
        Ok(history.best().composite)
    });
    let results = results.into_iter().collect::<Result<Vec<f64>>>()?;
    let per_cell = splits.len() * seeds.len();
    let mut leaderboard = Vec::with_capacity(cells.len());
    for (c, chunk) in results.chunks(per_cell).enumerate() {
        let run_scores = chunk.to_vec();
        let score = run_scores.iter().sum::<f64>() / run_scores.len() as f64;
        leaderboard.push(GridEntry {
            cell: cells[c],
            score,
            run_scores,
        });
    }
    leaderboard.sort_by(|a, b| b.score.total_cmp(&a.score));
    let best = leaderboard
        .first()
        .ok_or_else(|| Error::Config("empty grid".into()))?
        .cell;
    Ok(GridResult { best, leaderboard })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_splits, sbm_generate, SbmSpec};
    use crate::nn::Architecture;

    #[test]
    fn attention_grid_cardinality() {
        let space = GridSpace {
            lr: vec![0.01, 0.1],
            dropout: vec![0.0, 0.5],
            heads: vec![1, 4, 8],
            weight_decay: vec![0.0, 5e-5, 5e-4, 5e-3],
        };
        let tc = TrainConfig::default();
        assert_eq!(
            space
                .cells(&ModelConfig::new(Architecture::Oodgat), &tc)
                .len(),
            48
        );
        assert_eq!(
            space.cells(&ModelConfig::new(Architecture::Gcn), &tc).len(),
            16
        );
        let cells = space.cells(&ModelConfig::new(Architecture::Gat), &tc);
        assert!(cells.windows(2).all(|w| {
            let key = |c: &GridCell| (c.lr, c.dropout, c.heads as f64, c.weight_decay);
            key(&w[0]) < key(&w[1])
        }));
    }

    #[test]
    fn harmful_lr_loses() {
        let spec = SbmSpec {
            classes: 3,
            nodes_per_class: 25,
            p_intra: 0.15,
            p_inter: 0.01,
            feature_dim: 5,
            class_mean_separation: 1.5,
            ood_classes: vec![2],
        };
        let g = sbm_generate(&spec, 1).unwrap();
        let splits = vec![make_splits(&g, 5, 5, 0).unwrap()];
        let mut mc = ModelConfig::new(Architecture::Gcn);
        mc.hidden_dim = 8;
        let tc = TrainConfig {
            max_steps: 40,
            patience: 40,
            ..Default::default()
        };
        let space = GridSpace {
            lr: vec![0.01, 10.0],
            ..Default::default()
        };
        let res = grid_search(&space, &mc, &tc, &g, &splits, &[0], Exec::Sequential).unwrap();
        assert_eq!(res.best.lr, 0.01);
        assert_eq!(res.leaderboard.len(), 2);

        let single = GridSpace::default();
        let res = grid_search(&single, &mc, &tc, &g, &splits, &[0], Exec::Sequential).unwrap();
        assert_eq!(res.leaderboard.len(), 1);
        assert_eq!(res.best.lr, tc.lr);
    }
}
