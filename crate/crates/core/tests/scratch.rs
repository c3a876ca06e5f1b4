//! Temporary tuning harness; deleted before release.

use transference_core::datasets::{self, DatasetSpec, TrainBatcher};
use transference_core::it_mtl::{self, RunMode, TrainConfig};
use transference_core::net::{
    Activation, DenseNet, LayerSpec, LossKind, ModelSpec, OptimizerInit, OptimizerKind,
    OptimizerState, ParamSet, TaskSpec,
};
use transference_core::transference;
use transference_core::MultiTaskModel;

fn net(input_dim: usize, tasks: usize, width: usize, act: Activation) -> DenseNet {
    DenseNet::new(ModelSpec {
        input_dim,
        trunk: vec![LayerSpec { width, act }],
        tasks: (0..tasks)
            .map(|_| TaskSpec {
                head: vec![LayerSpec { width: 1, act: Activation::Identity }],
                loss: LossKind::Mse,
                weight: 1.0,
            })
            .collect(),
    })
    .unwrap()
}

fn run(rho: f64, seed: u64, act: Activation, lr: f64, epochs: usize, same_heads: bool) -> (f64, Vec<f64>) {
    let dataset = datasets::generate(&DatasetSpec::RelatedRegression {
        train: 128,
        valid: 0,
        test: 0,
        seed: 700 + seed,
        tasks: 2,
        input_dim: 8,
        rho,
        rho_matrix: None,
        noise: 0.05,
    })
    .unwrap();
    let net = net(8, 2, 10, act);
    let mut params = ParamSet::init_uniform(net.layout(), 8_800 + seed);
    if same_heads {
        let head0 = params.tasks[0].clone();
        params.tasks[1] = head0;
    }
    let opt = OptimizerState::new(
        &OptimizerInit { kind: OptimizerKind::Sgd, learning_rate: lr, momentum: 0.0 },
        &net.layout(),
    )
    .unwrap();
    let batcher = TrainBatcher::new(&dataset, 16, seed ^ 0xDA7A).unwrap();
    let cfg = TrainConfig {
        mode: RunMode::Measure,
        epochs,
        candidates: vec![],
        mech_seed: seed,
        record_snapshots: false,
    };
    let run = it_mtl::train(&net, &batcher, params, opt, &cfg).unwrap();
    let (per_epoch, matrix) =
        transference::aggregate(&run.records, 2, run.steps_per_epoch).unwrap();
    (
        matrix.scores.get(0, 1),
        per_epoch.iter().map(|e| e.scores.get(0, 1)).collect(),
    )
}

#[test]
fn probe_rho_signal() {
    for act in [Activation::Identity, Activation::Tanh] {
        for lr in [0.02, 0.05, 0.1] {
            for same_heads in [false, true] {
                let mut line = format!("act {act:?} lr {lr} same_heads {same_heads}: ");
                for rho in [-0.5, 0.0, 0.9] {
                    let mut total = 0.0;
                    for seed in 0..5 {
                        total += run(rho, seed, act, lr, 8, same_heads).0;
                    }
                    line.push_str(&format!("rho {rho}: {:+.4}  ", total / 5.0));
                }
                println!("{line}");
            }
        }
    }
    let (_, per_epoch) = run(-0.5, 0, Activation::Tanh, 0.05, 8, true);
    println!("rho -0.5 per-epoch: {per_epoch:?}");
    let (_, per_epoch) = run(0.0, 0, Activation::Tanh, 0.05, 8, true);
    println!("rho  0.0 per-epoch: {per_epoch:?}");
}
