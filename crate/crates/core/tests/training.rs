use rankloss::data::{synth_generate, SynthConfig, SynthData};
use rankloss::eval::sweeps::{self, SweepConfig};
use rankloss::losses::LossKind;
use rankloss::trainer::{encode_checkpoint, train, TrainConfig};

fn reference() -> SynthData {
    synth_generate(&SynthConfig::default()).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn every_loss_reduces_its_objective() {
    let data = reference();
    for loss in LossKind::ALL {
        let cfg = TrainConfig {
            loss,
            ..TrainConfig::default()
        };
        let out = train(&data.records, &cfg, None).unwrap();
        let n = out.step_losses.len();
        assert!(n >= 40, "{loss}: {n} steps");
        let first = mean(&out.step_losses[..10]);
        let last = mean(&out.step_losses[n - 10..]);
        assert!(last < first, "{loss}: {first} -> {last}");
        assert!(out.params.is_finite());
    }
}

#[test]
fn bias_goes_negative_in_first_epoch() {
    let data = reference();
    let out = train(&data.records, &TrainConfig::default(), None).unwrap();
    assert!(out.epochs[0].beta < 0.0, "beta after epoch 1: {}", out.epochs[0].beta);
    // losses that do not use the bias never move it
    let cfg = TrainConfig {
        loss: LossKind::InfoNce,
        ..TrainConfig::default()
    };
    assert_eq!(train(&data.records, &cfg, None).unwrap().params.beta, 0.0);
}

#[test]
fn training_is_bit_deterministic() {
    let data = reference();
    let cfg = TrainConfig {
        loss: LossKind::LambdaNdcg2,
        epochs: 1,
        ..TrainConfig::default()
    };
    let a = train(&data.records, &cfg, None).unwrap();
    let b = train(&data.records, &cfg, None).unwrap();
    assert_eq!(encode_checkpoint(&a.params), encode_checkpoint(&b.params));
    assert_eq!(a.epochs, b.epochs);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.step_losses), bits(&b.step_losses));
}

#[test]
fn sweep_csv_is_identical_across_runs_and_job_counts() {
    let mut cfg = SweepConfig::default();
    cfg.synth.queries = 300;
    cfg.synth.corpus_size = 300;
    cfg.synth.eval_queries = 30;
    cfg.train.epochs = 1;
    cfg.train.dim = 16;
    cfg.seeds = 2;
    let run = |jobs: usize| {
        let cfg = SweepConfig { jobs, ..cfg.clone() };
        let rows = sweeps::sweep_noise(&cfg, &[0.0, 0.3]).unwrap();
        sweeps::noise_csv(&rows, cfg.k)
    };
    let a = run(1);
    assert_eq!(a.lines().count(), 1 + 2 * 2 * 2);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3));
}
