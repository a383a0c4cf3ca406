//! Self-checks exposed through the CLI: the gradient-check suite and the
//! identity-vs-node homophily bound on random graphs.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    grad_check, GradCheckOptions, Matrix, SegmentIndex, SparseMatrix, Tape, Var,
};
use crate::error::{Error, Result};
use crate::graph::{identity_homophily, node_homophily, sbm_generate, Graph, SbmSpec};
use crate::nn::{Architecture, BoundParams, GraphInput, Mode, Model, ModelConfig};
use crate::objective::{objective, LossWeights};

/// Tolerance for primitives that are smooth at the sampled points.
pub const SMOOTH_TOLERANCE: f64 = 1e-6;
/// Tolerance for kinked primitives and composite losses.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub name: String,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub entries: usize,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// Values in `±[0.2, 1.5]`, away from kinks at zero.
fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    let mut m = random(rng, r, c, 0.2, 1.5);
    for v in m.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    m
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    smooth: bool,
    params: Vec<Matrix>,
    build: Build,
}

fn case(
    name: &'static str,
    smooth: bool,
    params: Vec<Matrix>,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Case {
        name,
        smooth,
        params,
        build: Box::new(build),
    }
}

/// Reduces a tensor to a scalar with fixed random weights so every entry
/// of the gradient is distinct.
fn weigh(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, r, c, -1.0, 1.0));
    let p = tape.mul(x, w)?;
    tape.sum(p)
}

fn ring_index(n: usize) -> Arc<SegmentIndex> {
    let edges: Vec<(usize, usize)> = (0..n)
        .map(|i| (i, (i + 1) % n))
        .chain([(0, n / 2)])
        .collect();
    Arc::new(SegmentIndex::with_self_loops(
        &crate::graph::Csr::from_undirected(n, &edges),
    ))
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let idx = ring_index(6);
    let e = idx.len();
    let mut sparse = random(rng, 5, 4, -1.0, 1.0);
    for (k, v) in sparse.data_mut().iter_mut().enumerate() {
        if k % 3 == 0 {
            *v = 0.0;
        }
    }
    let sparse = Arc::new(SparseMatrix::from_dense(&sparse));
    let (i1, i2, i3) = (Arc::clone(&idx), Arc::clone(&idx), Arc::clone(&idx));
    vec![
        case(
            "matmul",
            true,
            vec![random(rng, 3, 4, -1.0, 1.0), random(rng, 4, 2, -1.0, 1.0)],
            |t, p| {
                let y = t.matmul(p[0], p[1])?;
                weigh(t, y, 1)
            },
        ),
        case(
            "spmm",
            true,
            vec![random(rng, 4, 3, -1.0, 1.0)],
            move |t, p| {
                let y = t.spmm(Arc::clone(&sparse), p[0])?;
                weigh(t, y, 2)
            },
        ),
        case(
            "add_sub_broadcast",
            true,
            vec![random(rng, 3, 2, -1.0, 1.0), random(rng, 1, 1, -1.0, 1.0)],
            |t, p| {
                let a = t.add(p[0], p[1])?;
                let b = t.sub(p[1], a)?;
                let c = t.add(a, b)?;
                weigh(t, c, 3)
            },
        ),
        case(
            "mul_div",
            true,
            vec![random(rng, 3, 2, -1.0, 1.0), random(rng, 3, 2, 0.5, 2.0)],
            |t, p| {
                let a = t.mul(p[0], p[1])?;
                let b = t.div(a, p[1])?;
                let c = t.div(p[0], p[1])?;
                let d = t.add(b, c)?;
                weigh(t, d, 4)
            },
        ),
        case(
            "add_row",
            true,
            vec![random(rng, 4, 3, -1.0, 1.0), random(rng, 1, 3, -1.0, 1.0)],
            |t, p| {
                let y = t.add_row(p[0], p[1])?;
                weigh(t, y, 5)
            },
        ),
        case(
            "scale_offset_neg",
            true,
            vec![random(rng, 3, 3, -1.0, 1.0)],
            |t, p| {
                let a = t.scale(p[0], -2.5);
                let b = t.offset(a, 0.7);
                let c = t.neg(b);
                weigh(t, c, 6)
            },
        ),
        case(
            "sigmoid",
            true,
            vec![random(rng, 4, 2, -3.0, 3.0)],
            |t, p| {
                let y = t.sigmoid(p[0]);
                weigh(t, y, 7)
            },
        ),
        case("exp", true, vec![random(rng, 4, 2, -2.0, 2.0)], |t, p| {
            let y = t.exp(p[0]);
            weigh(t, y, 8)
        }),
        case("log", true, vec![random(rng, 4, 2, 0.3, 3.0)], |t, p| {
            let y = t.log(p[0]);
            let z = t.log_clamped(p[0], 1e-12);
            let s = t.add(y, z)?;
            weigh(t, s, 9)
        }),
        case("sqrt", true, vec![random(rng, 4, 2, 0.3, 3.0)], |t, p| {
            let y = t.sqrt(p[0]);
            weigh(t, y, 10)
        }),
        case("abs", false, vec![away_from_zero(rng, 4, 3)], |t, p| {
            let y = t.abs(p[0]);
            weigh(t, y, 11)
        }),
        case("relu", false, vec![away_from_zero(rng, 4, 3)], |t, p| {
            let y = t.relu(p[0]);
            weigh(t, y, 12)
        }),
        case(
            "leaky_relu",
            false,
            vec![away_from_zero(rng, 4, 3)],
            |t, p| {
                let y = t.leaky_relu(p[0], 0.2);
                weigh(t, y, 13)
            },
        ),
        case("elu", false, vec![away_from_zero(rng, 4, 3)], |t, p| {
            let y = t.elu(p[0], 1.0);
            weigh(t, y, 14)
        }),
        case(
            "sum_mean_row_sum",
            true,
            vec![random(rng, 3, 4, -1.0, 1.0)],
            |t, p| {
                let a = t.row_sum(p[0])?;
                let a = weigh(t, a, 15)?;
                let b = t.mean(p[0])?;
                let c = t.sum(p[0])?;
                let s = t.add(a, b)?;
                let s = t.mul(s, c)?;
                Ok(s)
            },
        ),
        case(
            "row_softmax",
            true,
            vec![random(rng, 4, 3, -2.0, 2.0)],
            |t, p| {
                let y = t.row_softmax(p[0]);
                weigh(t, y, 16)
            },
        ),
        case(
            "concat_slice",
            true,
            vec![random(rng, 3, 2, -1.0, 1.0), random(rng, 3, 3, -1.0, 1.0)],
            |t, p| {
                let c = t.concat_cols(&[p[0], p[1], p[0]])?;
                let s = t.slice_cols(c, 1, 3)?;
                let y = t.mul(s, s)?;
                weigh(t, y, 17)
            },
        ),
        case(
            "gather",
            true,
            vec![random(rng, 4, 3, -1.0, 1.0)],
            |t, p| {
                let g = t.gather_rows(p[0], &[3, 0, 3, 1])?;
                let a = weigh(t, g, 18)?;
                let h = t.gather_elems(p[0], &[(0, 0), (2, 1), (0, 0)])?;
                let b = weigh(t, h, 19)?;
                t.add(a, b)
            },
        ),
        case(
            "segment_weighted_sum",
            true,
            vec![random(rng, e, 3, -1.0, 1.0), random(rng, e, 1, -1.0, 1.0)],
            move |t, p| {
                let y = t.segment_weighted_sum(p[0], p[1], &i1)?;
                weigh(t, y, 20)
            },
        ),
        case(
            "aggregate",
            true,
            vec![random(rng, 6, 3, -1.0, 1.0), random(rng, e, 1, -1.0, 1.0)],
            move |t, p| {
                let y = t.aggregate(p[0], p[1], &i2)?;
                weigh(t, y, 21)
            },
        ),
        case(
            "segment_softmax",
            true,
            vec![random(rng, e, 1, -2.0, 2.0)],
            move |t, p| {
                let y = t.segment_softmax(p[0], &i3)?;
                weigh(t, y, 22)
            },
        ),
        case(
            "cosine_similarity",
            true,
            vec![random(rng, 5, 1, -1.0, 1.0), random(rng, 5, 1, -1.0, 1.0)],
            |t, p| {
                let c = t.cosine_similarity(p[0], p[1])?;
                let s = t.scale(c, 3.0);
                let x = t.sum(p[0])?;
                t.mul(s, x)
            },
        ),
    ]
}

/// Random 12-node graph with 3 classes (class 2 OOD) and Gaussian features.
pub fn gradcheck_graph(seed: u64) -> Graph {
    let spec = SbmSpec {
        classes: 3,
        nodes_per_class: 4,
        p_intra: 0.6,
        p_inter: 0.15,
        feature_dim: 5,
        class_mean_separation: 1.0,
        ood_classes: vec![2],
    };
    sbm_generate(&spec, seed).expect("valid spec")
}

fn model_case(arch: Architecture, weights: LossWeights, seed: u64) -> Result<(Vec<Matrix>, Build)> {
    let graph = gradcheck_graph(seed);
    let mut cfg = ModelConfig::new(arch);
    cfg.hidden_dim = 4;
    cfg.heads = 2;
    cfg.dropout = 0.3;
    cfg.drop_edge = if arch == Architecture::Mlp { 0.0 } else { 0.3 };
    let model = Model::for_graph(cfg, &graph)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = model.init_params(&mut rng);
    // move score vectors away from their all-equal start
    for (name, v) in store.names().to_vec().iter().zip(store.values_mut()) {
        if name.starts_with('a') {
            *v = random(&mut rng, v.rows(), v.cols(), -2.0, 2.0);
        }
    }
    let names = store.names().to_vec();
    let labelled: Vec<(usize, usize)> = graph
        .local_labels()
        .iter()
        .enumerate()
        .filter_map(|(v, y)| y.map(|y| (v, y)))
        .step_by(2)
        .collect();
    let input = GraphInput::new(&graph);
    let build: Build = Box::new(move |tape, vars| {
        let bound = BoundParams::new(&names, vars)?;
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let out = model.forward(tape, &bound, &input, Mode::Train(&mut mask_rng))?;
        let (loss, _) = objective(tape, &out, &labelled, &weights, 3, false)?;
        Ok(loss)
    });
    Ok((store.values().to_vec(), build))
}

/// Runs every operation check and the full-model loss checks.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = op_cases(&mut rng);
    let full = LossWeights {
        beta: 2.0,
        gamma: 0.5,
        zeta: 0.3,
        epsilon: 0.5,
        ..Default::default()
    };
    let models: [(&'static str, Architecture, LossWeights); 4] = [
        ("oodgat_loss", Architecture::Oodgat, full),
        ("gat_loss", Architecture::Gat, LossWeights::default()),
        ("gcn_loss", Architecture::Gcn, LossWeights::default()),
        ("mlp_loss", Architecture::Mlp, LossWeights::default()),
    ];
    for (name, arch, w) in models {
        let (params, build) = model_case(arch, w, seed + 7)?;
        cases.push(Case {
            name,
            smooth: false,
            params,
            build,
        });
    }
    let mut out = Vec::with_capacity(cases.len());
    for c in cases {
        let tolerance = if c.smooth {
            SMOOTH_TOLERANCE
        } else {
            TOLERANCE
        };
        let opts = GradCheckOptions {
            tolerance,
            ..Default::default()
        };
        let report = grad_check(&c.build, &c.params, opts).map_err(|e| Error::Run {
            run: c.name.into(),
            source: Box::new(e),
        })?;
        out.push(GradCase {
            name: c.name.to_string(),
            tolerance,
            max_rel_error: report.max_rel_error(),
            entries: c.params.iter().map(Matrix::len).sum(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct HomophilyCheck {
    pub graphs: usize,
    pub violations: usize,
    /// Smallest `identity - node` homophily gap seen.
    pub min_gap: f64,
    pub skipped: usize,
}

/// Draws `count` random graphs (alternating Erdős–Rényi and SBM, 10 to 200
/// nodes) with random labels and class-to-identity maps and compares the
/// two homophily ratios.
pub fn homophily_bound_check(count: usize, seed: u64) -> Result<HomophilyCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut check = HomophilyCheck {
        graphs: 0,
        violations: 0,
        min_gap: f64::INFINITY,
        skipped: 0,
    };
    while check.graphs < count {
        let n = rng.random_range(10..=200);
        let classes = rng.random_range(2..=6usize).min(n);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let edges = if check.graphs % 2 == 0 {
            let p = rng.random_range(0.01..0.3);
            let mut e = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random_bool(p) {
                        e.push((u, v));
                    }
                }
            }
            e
        } else {
            let (pin, pout) = (rng.random_range(0.05..0.5), rng.random_range(0.0..0.1));
            let mut e = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    let p = if labels[u] == labels[v] { pin } else { pout };
                    if rng.random_bool(p) {
                        e.push((u, v));
                    }
                }
            }
            e
        };
        let used = labels.iter().max().map_or(0, |m| m + 1);
        let mut map: Vec<u8> = (0..used).map(|_| rng.random_range(0..2u8)).collect();
        // keep both identities present when possible
        if used >= 2 && map.iter().all(|&m| m == map[0]) {
            map[0] ^= 1;
        }
        let ood: Vec<usize> = (0..used).filter(|&c| map[c] == 1).collect();
        let ood = if ood.is_empty() || ood.len() == used {
            vec![0]
        } else {
            ood
        };
        let graph = match Graph::new(Matrix::zeros(n, 1), labels, edges, &ood) {
            Ok((g, _)) => g,
            Err(_) => {
                check.skipped += 1;
                continue;
            }
        };
        let (h_node, h_id) = match (
            node_homophily(&graph, graph.labels()),
            identity_homophily(&graph, &map),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                // no node has a neighbour
                check.skipped += 1;
                continue;
            }
        };
        let gap = h_id - h_node;
        if gap < -1e-12 {
            check.violations += 1;
        }
        check.min_gap = check.min_gap.min(gap);
        check.graphs += 1;
    }
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let cases = gradcheck_suite(3).unwrap();
        assert!(cases.len() > 20);
        for c in &cases {
            assert!(c.passed(), "{} rel err {:e}", c.name, c.max_rel_error);
        }
    }

    #[test]
    fn homophily_bound_small_run() {
        let c = homophily_bound_check(50, 1).unwrap();
        assert_eq!(c.graphs, 50);
        assert_eq!(c.violations, 0);
    }
}
