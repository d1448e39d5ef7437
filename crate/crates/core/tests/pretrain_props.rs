mod common;

use std::sync::Arc;

use common::{arc, tiny_config, tiny_pixel_data, tiny_vector_data};
use tacoforge::data::generate;
use tacoforge::data::DataConfig;
use tacoforge::encoders::{EncoderSuite, SuiteSpec};
use tacoforge::losses::LossVariant;
use tacoforge::nn::{DType, ParamStore, Parameterized, Scalar};
use tacoforge::pretrain::{
    checkpoint_dtype, decode_checkpoint, decode_checkpoint_cast, encode_checkpoint, load_checkpoint, pretrain_to_dir,
    save_checkpoint, ModelSpec, PretrainConfig, PretrainModel, Pretrainer, RunOutputs, FINAL_CHECKPOINT,
    LAST_GOOD_CHECKPOINT, METRICS_FILE,
};
use tacoforge::Error;

fn same_params<T: Scalar>(a: &impl Parameterized<T>, b: &impl Parameterized<T>) -> bool {
    let (sa, sb) = (a.stores(), b.stores());
    sa.len() == sb.len()
        && sa.iter().zip(&sb).all(|((na, x), (nb, y))| {
            na == nb
                && x.step_count() == y.step_count()
                && x.iter().zip(y.iter()).all(|((n1, e1), (n2, e2))| {
                    n1 == n2 && e1.value == e2.value && e1.adam_m == e2.adam_m && e1.adam_v == e2.adam_v
                })
        })
}

fn losses<T: Scalar>(t: &Pretrainer<T>) -> Vec<f64> {
    t.metrics().iter().map(|m| m.loss).collect()
}

#[test]
fn zero_steps_returns_the_initialization() {
    let data = tiny_vector_data(0);
    let cfg = PretrainConfig {
        steps: 0,
        ..tiny_config(LossVariant::PremierTaco, DType::F64)
    };
    let ckpt = tacoforge::pretrain::pretrain::<f64>(&cfg, arc(&data)).unwrap();
    let suite = SuiteSpec::new(data.pretrain.obs_kind(), 2, cfg.k, &cfg.encoder).unwrap();
    let init = PretrainModel::<f64>::new(ModelSpec::new(suite, cfg.variant, &cfg.encoder), cfg.seed).unwrap();
    assert_eq!(ckpt.step, 0);
    assert!(same_params(&ckpt.model, &init));
}

#[test]
fn initial_loss_is_near_log_two() {
    let data = generate(&DataConfig {
        episodes_per_task: 10,
        ..Default::default()
    })
    .unwrap();
    let cfg = PretrainConfig::default();
    let mut t = Pretrainer::<f32>::new(cfg, Arc::new(data.pretrain)).unwrap();
    let mean = (0..20).map(|s| t.eval_loss(s).unwrap()).sum::<f64>() / 20.0;
    assert!((mean - std::f64::consts::LN_2).abs() < 0.2, "mean step-0 loss {mean}");
}

#[test]
fn same_seed_gives_identical_loss_sequences() {
    let data = tiny_vector_data(1);
    for variant in [
        LossVariant::PremierTaco,
        LossVariant::TacoBatch,
        LossVariant::PremierAllWindow,
        LossVariant::InverseDynamics,
    ] {
        let cfg = tiny_config(variant, DType::F64);
        let mut a = Pretrainer::<f64>::new(cfg.clone(), arc(&data)).unwrap();
        let mut b = Pretrainer::<f64>::new(cfg.clone(), arc(&data)).unwrap();
        a.run_until(30, |_, _| Ok(())).unwrap();
        b.run_until(30, |_, _| Ok(())).unwrap();
        assert_eq!(losses(&a), losses(&b), "{variant:?}");
        assert!(same_params(a.model(), b.model()));
        let mut c = Pretrainer::<f64>::new(PretrainConfig { seed: 1, ..cfg }, arc(&data)).unwrap();
        c.run_until(30, |_, _| Ok(())).unwrap();
        assert_ne!(losses(&a), losses(&c));
    }
}

#[test]
fn prefetch_does_not_change_the_run() {
    let data = tiny_vector_data(2);
    let cfg = tiny_config(LossVariant::PremierTaco, DType::F64);
    let mut a = Pretrainer::<f64>::new(cfg.clone(), arc(&data)).unwrap();
    let mut b = Pretrainer::<f64>::new(PretrainConfig { prefetch: true, ..cfg }, arc(&data)).unwrap();
    a.run_until(25, |_, _| Ok(())).unwrap();
    b.run_until(25, |_, _| Ok(())).unwrap();
    assert_eq!(losses(&a), losses(&b));
    assert!(same_params(a.model(), b.model()));
}

#[test]
fn resume_at_midpoint_is_bit_exact() {
    let data = tiny_vector_data(3);
    for variant in [LossVariant::PremierTaco, LossVariant::InverseDynamics] {
        let cfg = tiny_config(variant, DType::F64);
        let mut whole = Pretrainer::<f64>::new(cfg.clone(), arc(&data)).unwrap();
        whole.run_until(40, |_, _| Ok(())).unwrap();

        let mut first = Pretrainer::<f64>::new(cfg.clone(), arc(&data)).unwrap();
        first.run_until(20, |_, _| Ok(())).unwrap();
        let bytes = encode_checkpoint(&first.checkpoint()).unwrap();
        drop(first);
        let mut second = Pretrainer::resume(decode_checkpoint::<f64>(&bytes).unwrap(), arc(&data)).unwrap();
        assert_eq!(second.step(), 20);
        second.run_until(40, |_, _| Ok(())).unwrap();
        assert!(same_params(whole.model(), second.model()), "{variant:?}");
        assert_eq!(losses(&whole), losses(&second));
    }
}

#[test]
fn checkpoint_roundtrip_and_dtype_handling() {
    let data = tiny_pixel_data(0);
    let cfg = tiny_config(LossVariant::PremierTaco, DType::F32);
    let mut t = Pretrainer::<f32>::new(cfg, arc(&data)).unwrap();
    t.run_until(5, |_, _| Ok(())).unwrap();
    let ckpt = t.checkpoint();
    let bytes = encode_checkpoint(&ckpt).unwrap();
    assert_eq!(checkpoint_dtype(&bytes).unwrap(), DType::F32);
    let back = decode_checkpoint::<f32>(&bytes).unwrap();
    assert!(same_params(&back.model, &ckpt.model));
    assert_eq!(back.config, ckpt.config);
    assert_eq!(back.metric_tail, ckpt.metric_tail);
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);

    assert!(matches!(decode_checkpoint::<f64>(&bytes), Err(Error::Checkpoint(_))));
    let wide = decode_checkpoint_cast::<f64>(&bytes).unwrap();
    let phi = wide.suite().phi.iter().next().unwrap().1;
    let phi32 = ckpt.suite().phi.iter().next().unwrap().1;
    assert!(phi.value.data().iter().zip(phi32.value.data()).all(|(a, b)| *a == *b as f64));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert!(same_params(&load_checkpoint::<f32>(&path).unwrap().model, &ckpt.model));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let data = tiny_vector_data(4);
    let t = Pretrainer::<f64>::new(tiny_config(LossVariant::PremierTaco, DType::F64), arc(&data)).unwrap();
    let bytes = encode_checkpoint(&t.checkpoint()).unwrap();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    for bad in [flipped, bytes[..bytes.len() - 9].to_vec(), b"NOTACKPT".repeat(4)] {
        assert!(matches!(decode_checkpoint::<f64>(&bad), Err(Error::Checkpoint(_))));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trunc.ckpt");
    std::fs::write(&path, &bytes[..100]).unwrap();
    match load_checkpoint::<f64>(&path) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("trunc.ckpt"), "{msg}"),
        other => panic!("expected checkpoint error, got {:?}", other.map(|c| c.step)),
    }
}

#[test]
fn mismatched_parameters_and_datasets_are_rejected() {
    let data = tiny_vector_data(5);
    let cfg = tiny_config(LossVariant::PremierTaco, DType::F64);
    let ckpt = Pretrainer::<f64>::new(cfg.clone(), arc(&data)).unwrap().into_checkpoint();
    let s = ckpt.suite();
    let err = EncoderSuite::from_parts(s.spec.clone(), s.psi.clone(), s.psi.clone(), s.g.clone(), s.h.clone());
    assert!(matches!(err, Err(Error::Checkpoint(_))));
    let err = EncoderSuite::from_parts(s.spec.clone(), ParamStore::new(), s.psi.clone(), s.g.clone(), s.h.clone());
    assert!(matches!(err, Err(Error::Checkpoint(_))));

    let other = tiny_vector_data(6);
    assert!(matches!(Pretrainer::resume(ckpt, arc(&other)), Err(Error::Checkpoint(_))));
}

#[test]
fn training_reduces_the_loss() {
    let data = tiny_vector_data(7);
    for variant in [LossVariant::PremierTaco, LossVariant::TacoBatch, LossVariant::InverseDynamics] {
        let cfg = PretrainConfig {
            batch_size: 32,
            ..tiny_config(variant, DType::F32)
        };
        let mut t = Pretrainer::<f32>::new(cfg, arc(&data)).unwrap();
        t.run_until(400, |_, _| Ok(())).unwrap();
        let l = losses(&t);
        let head = l[..50].iter().sum::<f64>() / 50.0;
        let tail = l[l.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(tail < head, "{variant:?}: {head} -> {tail}");
    }
}

#[test]
fn run_directory_has_metrics_checkpoints_and_probes() {
    let data = tiny_vector_data(8);
    let cfg = PretrainConfig {
        checkpoint_every: 10,
        eval_probe_every: 15,
        ..tiny_config(LossVariant::PremierTaco, DType::F32)
    };
    let dir = tempfile::tempdir().unwrap();
    let mut t = Pretrainer::<f32>::new(cfg, arc(&data)).unwrap();
    let out = RunOutputs {
        dir: dir.path(),
        probe: Some(&data.probe),
    };
    pretrain_to_dir(&mut t, 30, out).unwrap();
    let metrics = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().count(), 30);
    for s in [10, 20, 30] {
        assert!(dir.path().join(format!("step_{s:08}.ckpt")).exists());
    }
    let probes = std::fs::read_to_string(dir.path().join("probe.jsonl")).unwrap();
    assert_eq!(probes.lines().count(), 2);
    let last = load_checkpoint::<f32>(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(last.step, 30);
}

#[test]
fn divergence_leaves_a_last_good_checkpoint() {
    let data = tiny_vector_data(9);
    let cfg = PretrainConfig {
        lr: 1e37,
        ..tiny_config(LossVariant::PremierTaco, DType::F32)
    };
    let dir = tempfile::tempdir().unwrap();
    let mut t = Pretrainer::<f32>::new(cfg, arc(&data)).unwrap();
    let err = pretrain_to_dir(
        &mut t,
        40,
        RunOutputs {
            dir: dir.path(),
            probe: None,
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Training(_)), "{err}");
    let good = load_checkpoint::<f32>(&dir.path().join(LAST_GOOD_CHECKPOINT)).unwrap();
    assert_eq!(good.step, t.step());
    assert!(good.step < 40);
    for (_, s) in good.model.stores() {
        assert!(s.iter().all(|(_, e)| e.value.data().iter().all(|v| v.is_finite())));
    }
}
