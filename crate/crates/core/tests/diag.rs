// scratch routing diagnostic (not part of the suite)
use gimcl::autoenc::reconstruction_errors;
use gimcl::data::Split;
use gimcl::gim::{train_subtask, GimModel, TrainConfig};
use gimcl::harness::{build_stream, DatasetSpec};
use gimcl::model::{CellKind, CellSizes};
use gimcl::numcore::{OptimizerSettings, Rng};

#[test]
#[ignore]
fn routing_confusion() {
    let spec = DatasetSpec::Digits { per_class: 120, permutation_seed: 1, split_seed: 2, data_seed: 3 };
    let stream = build_stream(&spec).unwrap();
    let master = Rng::new(42);
    let mut init_rng = master.derive(1);
    let mut gim = GimModel::new(CellKind::Lstm, 1, 2, CellSizes::uniform(32), 64);
    let cfg = TrainConfig {
        epochs: 30, batch_size: 16,
        optimizer: OptimizerSettings::adam(0.005),
        ae_lr: 0.01, ae_chunks: 2, beta: 0.1, clip: None,
    };
    for s in 0..stream.len() {
        gim.add_module(&mut init_rng);
        let mut rng = master.derive(100 + s as u64);
        train_subtask(&mut gim, stream.split(s, Split::Train), &cfg, &mut rng).unwrap();
    }
    for s in 0..stream.len() {
        let split = stream.split(s, Split::Test);
        let errs = reconstruction_errors(&gim.autoencoders, split).unwrap();
        let mut counts = vec![0usize; stream.len()];
        let mut mean_err = vec![0.0f64; stream.len()];
        for row in &errs {
            let mut best = 0;
            for (k, &e) in row.iter().enumerate() {
                mean_err[k] += e;
                if e < row[best] { best = k; }
            }
            counts[best] += 1;
        }
        let n = errs.len() as f64;
        let means: Vec<String> = mean_err.iter().map(|e| format!("{:.4}", e / n)).collect();
        println!("true subtask {s}: routed {counts:?}  mean recon err per AE [{}]", means.join(", "));
    }
}
