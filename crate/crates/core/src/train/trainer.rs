use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{Graph, SplitAssignment};
use crate::metrics::{self, ScoredNodes};
use crate::nn::{GraphInput, Mode, Model, ParamStore, Prediction};
use crate::objective::{objective, LossBreakdown, LossWeights};

fn default_lr() -> f64 {
    0.01
}

fn default_max_steps() -> usize {
    1000
}

fn default_patience() -> usize {
    200
}

/// Which validation AUROC enters the early-stopping composite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Best of the entropy and attention composites.
    #[default]
    Max,
    Entropy,
    /// Attention AUROC; entropy for models without attention scores.
    Attention,
}

impl Selection {
    fn composite(self, acc: f64, ent: f64, att: Option<f64>) -> f64 {
        match (self, att) {
            (Selection::Max, Some(a)) => acc + ent.max(a),
            (Selection::Attention, Some(a)) => acc + a,
            _ => acc + ent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub seed: u64,
    /// Stop gradients through the entropy target of the consistency loss.
    #[serde(default)]
    pub detach_consistency_target: bool,
    #[serde(default)]
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            weight_decay: 0.0,
            max_steps: default_max_steps(),
            patience: default_patience(),
            loss: LossWeights::default(),
            seed: 0,
            detach_consistency_target: false,
            selection: Selection::Max,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.max_steps == 0 || self.patience == 0 {
            return Err(Error::Config(
                "max_steps and patience must be at least 1".into(),
            ));
        }
        self.loss.validate()
    }
}

/// Validation measurements after one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub val_accuracy: f64,
    pub val_auroc_ent: f64,
    pub val_auroc_att: Option<f64>,
    /// AUROC + accuracy, AUROC chosen by the config's selection
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    pub best_step: usize,
}

impl TrainHistory {
    pub fn best(&self) -> &StepRecord {
        &self.records[self.best_step]
    }

    pub fn steps_run(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub params: ParamStore,
}

impl TrainedModel {
    pub fn predict(&self, input: &GraphInput) -> Result<Prediction> {
        self.model.predict(&self.params, input)
    }
}

/// Node sets and label lookups derived once per split.
pub struct SplitView {
    pub train: Vec<(usize, usize)>,
    pub val_id: Vec<(usize, usize)>,
    pub val: Vec<usize>,
    pub test_id: Vec<(usize, usize)>,
    pub test: Vec<usize>,
}

impl SplitView {
    pub fn new(graph: &Graph, splits: &SplitAssignment) -> Result<Self> {
        if splits.len() != graph.num_nodes() {
            return Err(Error::Population(format!(
                "split covers {} nodes, graph has {}",
                splits.len(),
                graph.num_nodes()
            )));
        }
        let local = graph.local_labels();
        let labelled = |nodes: &[usize]| -> Vec<(usize, usize)> {
            nodes
                .iter()
                .filter_map(|&v| local[v].map(|y| (v, y)))
                .collect()
        };
        let (train, val, test) = (splits.train(), splits.val(), splits.test());
        if let Some(&v) = train.iter().find(|&&v| local[v].is_none()) {
            return Err(Error::Population(format!("training node {v} is OOD")));
        }
        Ok(SplitView {
            train: labelled(&train),
            val_id: labelled(&val),
            val,
            test_id: labelled(&test),
            test,
        })
    }
}

/// Validation accuracy, entropy AUROC and (if available) attention AUROC.
fn validate(pred: &Prediction, graph: &Graph, view: &SplitView) -> Result<(f64, f64, Option<f64>)> {
    let argmax: Vec<usize> = (0..pred.probs.rows())
        .map(|r| metrics::argmax(pred.probs.row(r)))
        .collect();
    let acc = metrics::accuracy(&argmax, &view.val_id)?;
    let ent = metrics::ood_scores(pred, metrics::ScoreKind::Entropy)?;
    let auroc_ent = metrics::auroc(&ScoredNodes::select(&ent, graph.identity(), &view.val)?)?;
    let auroc_att = match pred.attention_scores() {
        Some(att) => Some(metrics::auroc(&ScoredNodes::select(
            &att,
            graph.identity(),
            &view.val,
        )?)?),
        None => None,
    };
    Ok((acc, auroc_ent, auroc_att))
}

/// Full-batch training with early stopping on the validation composite.
///
/// Step `t` runs a training-mode forward, the objective at `t`, backward
/// and an Adam update, then evaluates. Training stops after `max_steps`
/// or once `patience` steps pass without a strict improvement. The
/// returned parameters are those of the best step.
pub fn train(
    model: &Model,
    graph: &Graph,
    input: &GraphInput,
    splits: &SplitAssignment,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainHistory)> {
    cfg.validate()?;
    let view = SplitView::new(graph, splits)?;
    if view.train.is_empty() {
        return Err(Error::Population("no labelled training nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.init_params(&mut rng);
    let mut opt = Adam::new(&params, cfg.lr, cfg.weight_decay);
    let mut records: Vec<StepRecord> = Vec::new();
    let mut best_step = 0;
    let mut best_params = params.clone();

    for t in 0..cfg.max_steps {
        let mut tape = Tape::with_exec(input.exec());
        let bound = params.bind(&mut tape);
        let out = model.forward(&mut tape, &bound, input, Mode::Train(&mut rng))?;
        let (loss, breakdown) = objective(
            &mut tape,
            &out,
            &view.train,
            &cfg.loss,
            t,
            cfg.detach_consistency_target,
        )?;
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite {
                step: t,
                detail: format!("loss {breakdown:?}"),
            });
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<_> = bound.vars().iter().map(|&v| grads.wrt(v)).collect();
        drop(tape);
        opt.step(&mut params, &grads).map_err(|e| match e {
            Error::NonFinite { detail, .. } => Error::NonFinite {
                step: t,
                detail: format!("{detail}; loss {breakdown:?}"),
            },
            other => other,
        })?;

        let pred = model.predict(&params, input)?;
        let (acc, auroc_ent, auroc_att) = validate(&pred, graph, &view)?;
        let composite = cfg.selection.composite(acc, auroc_ent, auroc_att);
        records.push(StepRecord {
            step: t,
            loss: breakdown,
            val_accuracy: acc,
            val_auroc_ent: auroc_ent,
            val_auroc_att: auroc_att,
            composite,
        });
        if t == 0 || composite > records[best_step].composite {
            best_step = t;
            best_params = params.clone();
        } else if t - best_step >= cfg.patience {
            break;
        }
    }
    log::debug!(
        "trained {} for {} steps, best step {} composite {:.4}",
        model.config().architecture.as_str(),
        records.len(),
        best_step,
        records[best_step].composite
    );
    Ok((
        TrainedModel {
            model: model.clone(),
            params: best_params,
        },
        TrainHistory { records, best_step },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_splits, sbm_generate, SbmSpec};
    use crate::nn::{Architecture, ModelConfig};

    fn sbm() -> (Graph, SplitAssignment) {
        let spec = SbmSpec {
            classes: 3,
            nodes_per_class: 30,
            p_intra: 0.15,
            p_inter: 0.01,
            feature_dim: 6,
            class_mean_separation: 1.5,
            ood_classes: vec![2],
        };
        let g = sbm_generate(&spec, 5).unwrap();
        let s = make_splits(&g, 5, 5, 1).unwrap();
        (g, s)
    }

    fn small(arch: Architecture) -> ModelConfig {
        let mut c = ModelConfig::new(arch);
        c.hidden_dim = 8;
        c.heads = 2;
        c
    }

    #[test]
    fn zero_lr_stalls_with_patience_one() {
        let (g, s) = sbm();
        let m = Model::for_graph(small(Architecture::Gcn), &g).unwrap();
        let mut cfg = TrainConfig {
            lr: 0.0,
            patience: 1,
            ..Default::default()
        };
        cfg.max_steps = 50;
        let mut mc = m.config().clone();
        mc.dropout = 0.0;
        let m = Model::for_graph(mc, &g).unwrap();
        let (_, h) = train(&m, &g, &GraphInput::new(&g), &s, &cfg).unwrap();
        assert_eq!(h.steps_run(), 2);
        assert_eq!(h.best_step, 0);
    }

    #[test]
    fn same_seed_same_history() {
        let (g, s) = sbm();
        let mut mc = small(Architecture::Oodgat);
        mc.drop_edge = 0.3;
        let m = Model::for_graph(mc, &g).unwrap();
        let loss = LossWeights {
            beta: 1.0,
            gamma: 0.05,
            zeta: 0.005,
            ..Default::default()
        };
        let cfg = TrainConfig {
            max_steps: 15,
            seed: 4,
            loss,
            ..Default::default()
        };
        let input = GraphInput::new(&g);
        let (a, ha) = train(&m, &g, &input, &s, &cfg).unwrap();
        let (b, hb) = train(&m, &g, &input, &s, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
    }

    #[test]
    fn best_checkpoint_reproduces_best_composite() {
        let (g, s) = sbm();
        let m = Model::for_graph(small(Architecture::Gat), &g).unwrap();
        let cfg = TrainConfig {
            max_steps: 30,
            seed: 2,
            ..Default::default()
        };
        let input = GraphInput::new(&g);
        let (trained, h) = train(&m, &g, &input, &s, &cfg).unwrap();
        let view = SplitView::new(&g, &s).unwrap();
        let (acc, ent, _) = validate(&trained.predict(&input).unwrap(), &g, &view).unwrap();
        assert_eq!(acc + ent, h.best().composite);
        let max = h
            .records
            .iter()
            .map(|r| r.composite)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, h.best().composite);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (g, s) = sbm();
        let m = Model::for_graph(small(Architecture::Mlp), &g).unwrap();
        let cfg = TrainConfig {
            patience: 0,
            ..Default::default()
        };
        assert!(matches!(
            train(&m, &g, &GraphInput::new(&g), &s, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn selection_composites() {
        assert_eq!(Selection::Max.composite(0.5, 0.7, Some(0.9)), 1.4);
        assert_eq!(Selection::Max.composite(0.5, 0.7, None), 1.2);
        assert_eq!(Selection::Entropy.composite(0.5, 0.7, Some(0.9)), 1.2);
        assert_eq!(Selection::Attention.composite(0.5, 0.7, Some(0.25)), 0.75);
        assert_eq!(Selection::Attention.composite(0.5, 0.7, None), 1.2);
        let cfg: TrainConfig = toml::from_str("selection = \"attention\"").unwrap();
        assert_eq!((cfg.selection, cfg.lr), (Selection::Attention, 0.01));
    }
}
