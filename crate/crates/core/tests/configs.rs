use std::path::{Path, PathBuf};

use scalegan::harness::{ExperimentConfig, Sweep};
use scalegan::{forward_flops, training_step_flops, ComputeModel, KvMap, ModelConfig};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn desk_config_spells_out_the_defaults() {
    let exp = ExperimentConfig::load(configs().join("desk.kv")).unwrap();
    let mut expect = ExperimentConfig::desk_default();
    expect.train.checkpoint_every = 1000;
    assert_eq!(exp.hash(), expect.hash());
}

#[test]
fn shipped_experiments_and_sweeps_resolve() {
    let acceptance = ExperimentConfig::load(configs().join("acceptance.kv")).unwrap();
    assert_eq!(acceptance.g.num_scales(), 4);
    for base in ["desk.kv", "acceptance.kv"] {
        let kv = KvMap::load(configs().join(base)).unwrap();
        for sweep in ["consistency.kv", "aggregation.kv", "acceptance.kv"] {
            let sweep = Sweep::load(configs().join("sweeps").join(sweep)).unwrap();
            assert_eq!(sweep.num_runs(), 3 * sweep.variants.len());
            for name in sweep.variants.keys() {
                for &seed in &sweep.seeds {
                    let exp = sweep.resolve(&kv, name, seed).unwrap();
                    assert_eq!(exp.train.seed, seed);
                }
            }
        }
    }
}

#[test]
fn model_and_derived_ledger_configs_load() {
    let g_b2 = ModelConfig::from_kv(
        &KvMap::load(configs().join("models/g_b2.kv")).unwrap(),
        &ModelConfig::desk_generator(),
    )
    .unwrap();
    assert_eq!(g_b2, ModelConfig::latent_g_b2());
    let d_b2 = ModelConfig::from_kv(
        &KvMap::load(configs().join("models/d_b2.kv")).unwrap(),
        &ModelConfig::desk_generator(),
    )
    .unwrap();
    assert_eq!(d_b2, ModelConfig::latent_d_b2());
    let derived = ComputeModel::load(configs().join("derived_ledger.kv")).unwrap();
    let expect = 4.0 * forward_flops(&ModelConfig::latent_g_h2()).unwrap()
        + 10.5 * forward_flops(&ModelConfig::latent_d_b2()).unwrap();
    assert!((training_step_flops(&derived).unwrap() - expect).abs() < 1e-9 * expect);
}
