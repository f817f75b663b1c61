// temporary probe: scratch-vs-finetune noise robustness
use graphsteal::cli::ExperimentSpec;
use graphsteal::exec::Exec;
use graphsteal::steal::{run_attack, train_target, RunOptions, Strategy};

#[test]
#[ignore]
fn probe_scratch() {
    let spec = ExperimentSpec::default();
    let ds = spec.materialize_dataset().unwrap();
    let config = spec.model_config(ds.feat_dim, ds.num_classes).unwrap();
    let (target, acc) = train_target(&ds, config, 200, 0.01, 3, Exec::Par).unwrap();
    println!("target acc {acc:.3}");
    for scratch in [true] {
        for batch in [64usize, 256] {
            for noise in [None, Some(0.2)] {
                let mut fids = Vec::new();
                for seed in [1u64, 2, 3] {
                    let mut opts = RunOptions::new(Strategy::Aud, seed);
                    opts.exec = Exec::Par;
                    opts.retrain_scratch = scratch;
                    opts.clone_batch = batch;
                    opts.noise = noise;
                    fids.push(run_attack(&ds, &target, &opts).unwrap().report.final_fidelity());
                }
                let mean: f64 = fids.iter().sum::<f64>() / fids.len() as f64;
                println!("scratch={scratch} batch={batch} noise={noise:?} AUD {mean:.3}");
            }
        }
    }
}
