use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    dense_layer, gat_layer, gcn_layer, oodgat_layer, Combine, GatHead, LayerInput, OodgatHead,
};
use super::params::{BoundParams, ParamStore};
use super::{Architecture, ModelConfig};
use crate::autodiff::{Matrix, SegmentIndex, SparseMatrix, Tape, Var};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::Graph;

/// Per-graph constants shared by every forward pass: sparse features and
/// the self-looped neighbourhood index.
#[derive(Clone)]
pub struct GraphInput {
    features: Arc<SparseMatrix>,
    index: Arc<SegmentIndex>,
    exec: Exec,
}

impl GraphInput {
    pub fn new(graph: &Graph) -> Self {
        GraphInput {
            features: Arc::new(SparseMatrix::from_dense(graph.features())),
            index: Arc::new(SegmentIndex::with_self_loops(graph.csr())),
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Arc<SparseMatrix> {
        &self.features
    }

    pub fn index(&self) -> &Arc<SegmentIndex> {
        &self.index
    }
}

/// Training mode draws dropout and drop-edge masks from the given stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

pub struct ForwardOutput {
    /// n x C row-stochastic predictions.
    pub probs: Var,
    /// Head-averaged node scores of layers 1 and 2 (OODGAT only).
    pub scores: Option<(Var, Var)>,
}

/// Evaluation-mode outputs detached from any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Matrix,
    pub layer_scores: Option<(Vec<f64>, Vec<f64>)>,
}

impl Prediction {
    /// Mean of the two layer scores, per node.
    pub fn attention_scores(&self) -> Option<Vec<f64>> {
        self.layer_scores
            .as_ref()
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect())
    }
}

#[derive(Clone, Copy)]
enum Init {
    Glorot,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    in_dim: usize,
    num_classes: usize,
}

impl Model {
    pub fn new(config: ModelConfig, in_dim: usize, num_classes: usize) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 || num_classes < 2 {
            return Err(Error::Config(format!(
                "model needs input features and at least 2 classes, got in_dim {in_dim}, {num_classes} classes"
            )));
        }
        Ok(Model {
            config,
            in_dim,
            num_classes,
        })
    }

    /// Model sized for `graph`'s features and ID classes.
    pub fn for_graph(config: ModelConfig, graph: &Graph) -> Result<Self> {
        Self::new(config, graph.feature_dim(), graph.id_classes().len())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn layout(&self) -> Vec<(String, usize, usize, Init)> {
        let (d, h, c) = (self.in_dim, self.config.hidden_dim, self.num_classes);
        let k = self.config.heads;
        let mut out = Vec::new();
        let mut add =
            |name: String, r: usize, cols: usize, init: Init| out.push((name, r, cols, init));
        match self.config.architecture {
            Architecture::Mlp | Architecture::Gcn => {
                add("w1".into(), d, h, Init::Glorot);
                add("b1".into(), 1, h, Init::Zeros);
                add("w2".into(), h, c, Init::Glorot);
                add("b2".into(), 1, c, Init::Zeros);
            }
            Architecture::Gat => {
                for (layer, rows, width) in [(1, d, h), (2, k * h, c)] {
                    for head in 0..k {
                        add(format!("w{layer}.{head}"), rows, width, Init::Glorot);
                        add(format!("src{layer}.{head}"), width, 1, Init::Glorot);
                        add(format!("dst{layer}.{head}"), width, 1, Init::Glorot);
                    }
                }
                add("b1".into(), 1, k * h, Init::Zeros);
                add("b2".into(), 1, c, Init::Zeros);
            }
            Architecture::Oodgat => {
                for (layer, rows, width) in [(1, d, h), (2, k * h, c)] {
                    for head in 0..k {
                        add(format!("w{layer}.{head}"), rows, width, Init::Glorot);
                        add(format!("a{layer}.{head}"), width, 1, Init::Zeros);
                    }
                }
                add("b1".into(), 1, k * h, Init::Zeros);
                add("b2".into(), 1, c, Init::Zeros);
            }
        }
        out
    }

    /// Glorot-uniform weights, zero biases and zero OODGAT score vectors.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, r, c, init) in self.layout() {
            let m = match init {
                Init::Zeros => Matrix::zeros(r, c),
                Init::Glorot => {
                    let bound = (6.0 / (r + c) as f64).sqrt();
                    let data = (0..r * c)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    Matrix::from_vec(r, c, data).expect("layout shape")
                }
            };
            store.push(name, m);
        }
        store
    }

    /// Checks names and shapes of `params` against this model.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let layout = self.layout();
        if layout.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, r, c, _), (pname, m)) in layout.iter().zip(params.iter()) {
            if name != pname || m.shape() != (*r, *c) {
                return Err(Error::Config(format!(
                    "parameter mismatch: expected {name} {r}x{c}, found {pname} {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        input: &GraphInput,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        if input.feature_dim() != self.in_dim {
            return Err(Error::shape(
                "model_forward",
                format!(
                    "model expects {} features, graph has {}",
                    self.in_dim,
                    input.feature_dim()
                ),
            ));
        }
        let cfg = &self.config;
        let mut rng = match mode {
            Mode::Train(rng) => Some(rng),
            Mode::Eval => None,
        };
        let index = match rng.as_deref_mut() {
            Some(r) if cfg.drop_edge > 0.0 && cfg.architecture != Architecture::Mlp => {
                Arc::new(input.index.drop_entries(cfg.drop_edge, r))
            }
            _ => Arc::clone(&input.index),
        };
        let features = match rng.as_deref_mut() {
            Some(r) if cfg.dropout > 0.0 => {
                Arc::new(sparse_dropout(&input.features, cfg.dropout, r))
            }
            _ => Arc::clone(&input.features),
        };
        let x = LayerInput::Sparse(features);
        let act = Some(cfg.activation);
        let k = cfg.heads;

        let (logits, scores) = match cfg.architecture {
            Architecture::Mlp => {
                let h = dense_layer(tape, &x, params.get("w1")?, Some(params.get("b1")?), act)?;
                let h = dropout(tape, h, cfg.dropout, rng.as_deref_mut());
                let out = dense_layer(
                    tape,
                    &LayerInput::Dense(h),
                    params.get("w2")?,
                    Some(params.get("b2")?),
                    None,
                )?;
                (out, None)
            }
            Architecture::Gcn => {
                let h = gcn_layer(
                    tape,
                    &x,
                    &index,
                    params.get("w1")?,
                    Some(params.get("b1")?),
                    act,
                )?;
                let h = dropout(tape, h, cfg.dropout, rng.as_deref_mut());
                let h = LayerInput::Dense(h);
                let out = gcn_layer(
                    tape,
                    &h,
                    &index,
                    params.get("w2")?,
                    Some(params.get("b2")?),
                    None,
                )?;
                (out, None)
            }
            Architecture::Gat => {
                let heads = |layer: usize| -> Result<Vec<GatHead>> {
                    (0..k)
                        .map(|i| {
                            Ok(GatHead {
                                w: params.get(&format!("w{layer}.{i}"))?,
                                a_src: params.get(&format!("src{layer}.{i}"))?,
                                a_dst: params.get(&format!("dst{layer}.{i}"))?,
                            })
                        })
                        .collect()
                };
                let b1 = Some(params.get("b1")?);
                let h = gat_layer(tape, &x, &index, &heads(1)?, Combine::Concat, b1, act)?;
                let h = dropout(tape, h, cfg.dropout, rng.as_deref_mut());
                let b2 = Some(params.get("b2")?);
                let out = gat_layer(
                    tape,
                    &LayerInput::Dense(h),
                    &index,
                    &heads(2)?,
                    Combine::Average,
                    b2,
                    None,
                )?;
                (out, None)
            }
            Architecture::Oodgat => {
                let heads = |layer: usize| -> Result<Vec<OodgatHead>> {
                    (0..k)
                        .map(|i| {
                            Ok(OodgatHead {
                                w: params.get(&format!("w{layer}.{i}"))?,
                                a: params.get(&format!("a{layer}.{i}"))?,
                            })
                        })
                        .collect()
                };
                let b1 = Some(params.get("b1")?);
                let l1 = oodgat_layer(tape, &x, &index, &heads(1)?, Combine::Concat, b1, act)?;
                let h = dropout(tape, l1.hidden, cfg.dropout, rng.as_deref_mut());
                let b2 = Some(params.get("b2")?);
                let l2 = oodgat_layer(
                    tape,
                    &LayerInput::Dense(h),
                    &index,
                    &heads(2)?,
                    Combine::Average,
                    b2,
                    None,
                )?;
                (l2.hidden, Some((l1.mean_score, l2.mean_score)))
            }
        };
        let probs = tape.row_softmax(logits);
        Ok(ForwardOutput { probs, scores })
    }

    /// Evaluation-mode forward on a throwaway tape.
    pub fn predict(&self, params: &ParamStore, input: &GraphInput) -> Result<Prediction> {
        let mut tape = Tape::with_exec(input.exec());
        let bound = params.bind_constant(&mut tape);
        let out = self.forward(&mut tape, &bound, input, Mode::Eval)?;
        let column = |v: Var| tape.value(v).data().to_vec();
        Ok(Prediction {
            probs: tape.value(out.probs).clone(),
            layer_scores: out.scores.map(|(a, b)| (column(a), column(b))),
        })
    }
}

/// Inverted dropout on the stored entries of a sparse matrix.
fn sparse_dropout(x: &SparseMatrix, p: f64, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let keep = 1.0 / (1.0 - p);
    let values = x
        .values()
        .iter()
        .map(|&v| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                v * keep
            }
        })
        .collect();
    x.with_values(values)
}

fn dropout(tape: &mut Tape, h: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    let Some(rng) = rng else { return h };
    if p == 0.0 {
        return h;
    }
    let (r, c) = tape.shape(h);
    let keep = 1.0 / (1.0 - p);
    let data = (0..r * c)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mask = tape.constant(Matrix::from_vec(r, c, data).expect("mask shape"));
    tape.mul(h, mask).expect("mask matches hidden shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::test_graphs::labeled;
    use crate::nn::Activation;
    use rand::SeedableRng;

    fn toy() -> Graph {
        labeled(
            &[0, 0, 1, 1, 2, 2, 0, 1, 2, 2],
            &[
                (0, 1),
                (1, 2),
                (2, 3),
                (3, 4),
                (4, 5),
                (5, 6),
                (6, 7),
                (8, 9),
                (0, 9),
            ],
            &[2],
        )
    }

    fn model(arch: Architecture, g: &Graph) -> (Model, ParamStore) {
        let mut cfg = ModelConfig::new(arch);
        cfg.hidden_dim = 5;
        cfg.heads = 2;
        let m = Model::for_graph(cfg, g).unwrap();
        let p = m.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        (m, p)
    }

    #[test]
    fn rows_are_distributions_for_all_architectures() {
        let g = toy();
        let input = GraphInput::new(&g);
        for arch in [
            Architecture::Mlp,
            Architecture::Gcn,
            Architecture::Gat,
            Architecture::Oodgat,
        ] {
            let (m, p) = model(arch, &g);
            m.check_params(&p).unwrap();
            let pred = m.predict(&p, &input).unwrap();
            assert_eq!(pred.probs.shape(), (10, 2));
            for r in 0..10 {
                assert!((pred.probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert_eq!(pred.layer_scores.is_some(), arch == Architecture::Oodgat);
        }
    }

    #[test]
    fn eval_is_deterministic_and_train_mode_is_seeded() {
        let g = toy();
        let input = GraphInput::new(&g);
        let (mut m, p) = model(Architecture::Oodgat, &g);
        assert_eq!(
            m.predict(&p, &input).unwrap(),
            m.predict(&p, &input).unwrap()
        );
        m.config.drop_edge = 0.5;
        let run = |seed: u64| {
            let mut t = Tape::new();
            let b = p.bind(&mut t);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = m
                .forward(&mut t, &b, &input, Mode::Train(&mut rng))
                .unwrap();
            t.value(out.probs).clone()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn initial_oodgat_scores_are_one_half() {
        let g = toy();
        let (m, p) = model(Architecture::Oodgat, &g);
        let pred = m.predict(&p, &GraphInput::new(&g)).unwrap();
        assert!(pred.attention_scores().unwrap().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn mlp_ignores_edges() {
        let g = toy();
        let (m, p) = model(Architecture::Mlp, &g);
        let other = g.with_edges(g.edges()[..3].to_vec());
        let a = m.predict(&p, &GraphInput::new(&g)).unwrap();
        let b = m.predict(&p, &GraphInput::new(&other)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let g = toy();
        let (m, _) = model(Architecture::Gcn, &g);
        let (_, other) = model(Architecture::Oodgat, &g);
        assert!(m.check_params(&other).is_err());
        let mut cfg = ModelConfig::new(Architecture::Gcn);
        cfg.dropout = 1.0;
        assert!(Model::new(cfg, 3, 2).is_err());
        let mut cfg = ModelConfig::new(Architecture::Gat);
        cfg.activation = Activation::Relu;
        cfg.heads = 0;
        assert!(Model::new(cfg, 3, 2).is_err());
    }
}
