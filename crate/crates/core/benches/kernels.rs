use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oodgat::autodiff::{Matrix, SegmentIndex, Tape};
use oodgat::exec;
use oodgat::graph::{make_splits, sbm_generate, Graph, SbmSpec};
use oodgat::nn::{Architecture, GraphInput, Model, ModelConfig};
use oodgat::objective::LossWeights;
use oodgat::train::{train, TrainConfig};
use oodgat::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn sbm(nodes_per_class: usize) -> Graph {
    let spec = SbmSpec {
        classes: 6,
        nodes_per_class,
        p_intra: 0.02,
        p_inter: 0.001,
        feature_dim: 64,
        class_mean_separation: 1.0,
        ood_classes: vec![4, 5],
    };
    sbm_generate(&spec, 1).unwrap()
}

fn gemm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(2048, 256, &mut rng);
    let b = random(256, 128, &mut rng);
    let mut group = c.benchmark_group("gemm_2048x256x128");
    for (name, mode) in MODES {
        group.bench_function(name, |bench| {
            bench.iter(|| a.matmul_with(black_box(&b), mode).unwrap())
        });
    }
    group.finish();
}

fn aggregate(c: &mut Criterion) {
    let graph = sbm(500);
    let index = Arc::new(SegmentIndex::with_self_loops(graph.csr()));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(graph.num_nodes(), 128, &mut rng);
    let w = random(index.len(), 1, &mut rng);
    let mut group = c.benchmark_group("aggregate_3000x128");
    for (name, mode) in MODES {
        group.bench_function(name, |bench| {
            bench.iter(|| {
                let mut tape = Tape::with_exec(mode);
                let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
                tape.aggregate(xv, wv, &index).unwrap();
                tape
            })
        });
    }
    group.finish();
}

fn oodgat_config() -> (ModelConfig, TrainConfig) {
    let mut model = ModelConfig::new(Architecture::Oodgat);
    model.drop_edge = 0.6;
    let loss = LossWeights {
        beta: 2.0,
        gamma: 0.05,
        zeta: 0.005,
        epsilon: 0.6,
        ..Default::default()
    };
    (
        model,
        TrainConfig {
            loss,
            ..Default::default()
        },
    )
}

fn train_steps(c: &mut Criterion) {
    let graph = sbm(500);
    let splits = make_splits(&graph, 20, 10, 0).unwrap();
    let (mc, tc) = oodgat_config();
    let model = Model::for_graph(mc, &graph).unwrap();
    let cfg = TrainConfig {
        max_steps: 5,
        patience: 5,
        ..tc
    };
    let mut group = c.benchmark_group("oodgat_5_steps_3000_nodes");
    group.sample_size(10);
    for (name, mode) in MODES {
        let input = GraphInput::new(&graph).with_exec(mode);
        group.bench_function(name, |bench| {
            bench.iter(|| train(&model, &graph, &input, &splits, &cfg).unwrap())
        });
    }
    group.finish();
}

fn independent_runs(c: &mut Criterion) {
    let graph = sbm(100);
    let splits = make_splits(&graph, 10, 10, 0).unwrap();
    let (mc, tc) = oodgat_config();
    let model = Model::for_graph(mc, &graph).unwrap();
    let input = GraphInput::new(&graph).with_exec(Exec::Sequential);
    let seeds: Vec<u64> = (0..4).collect();
    let mut group = c.benchmark_group("four_runs_600_nodes");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |bench, &mode| {
            bench.iter(|| {
                exec::map(mode, &seeds, |&seed| {
                    let cfg = TrainConfig {
                        seed,
                        max_steps: 20,
                        patience: 20,
                        ..tc.clone()
                    };
                    train(&model, &graph, &input, &splits, &cfg)
                        .unwrap()
                        .1
                        .best_step
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, gemm, aggregate, train_steps, independent_runs);
criterion_main!(benches);
