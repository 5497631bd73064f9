mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skd_core::dataset::{self, ClipSample, Split};
use skd_core::distill::{self, DistillConfig, Phase};
use skd_core::network::{self, LayerTable};
use skd_core::optim::{adam_step, AdamConfig, AdamState};
use skd_core::{synth, Error, Tensor32, Tensor64, WeightStore64};

/// Textbook Adam written out scalar by scalar.
fn reference_adam(p0: &[f64], grads: &[Vec<f64>], cfg: &AdamConfig) -> Vec<f64> {
    let mut p = p0.to_vec();
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / (1.0 - cfg.beta1.powi(t));
            let vh = v[i] / (1.0 - cfg.beta2.powi(t));
            p[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    p
}

#[test]
fn adam_follows_reference_trace() {
    let cfg = AdamConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grads: Vec<Vec<f64>> = (0..25).map(|_| (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let mut store = WeightStore64::new();
    store.insert("fusion.conv9.kernel", Tensor64::new(vec![2, 3], p0.clone()).unwrap()).unwrap();
    let mut state = AdamState::new();
    for g in &grads {
        let mut gs = WeightStore64::new();
        gs.insert("fusion.conv9.kernel", Tensor64::new(vec![2, 3], g.clone()).unwrap()).unwrap();
        adam_step(&mut store, &gs, &mut state, &cfg).unwrap();
    }
    let want = reference_adam(&p0, &grads, &cfg);
    for (a, b) in store.get("fusion.conv9.kernel").unwrap().data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }
    assert_eq!(state.step(), 25);
}

fn maps() -> impl Strategy<Value = (Tensor32, Tensor32, Tensor32)> {
    (1usize..3, 2usize..6, 2usize..6).prop_flat_map(|(n, h, w)| {
        let len = n * h * w;
        let v = || prop::collection::vec(-2.0f32..2.0, len);
        (v(), v(), v()).prop_map(move |(a, b, c)| {
            let t = |d| Tensor32::new(vec![n, 1, h, w], d).unwrap();
            (t(a), t(b), t(c))
        })
    })
}

proptest! {
    #[test]
    fn loss_endpoints_and_zero(ps in maps()) {
        let (p, s, h) = ps;
        prop_assert_eq!(distill::student_loss(&p, &s, &h, 1.0).unwrap(), distill::fusion_loss(&p, &s).unwrap());
        prop_assert_eq!(distill::student_loss(&p, &s, &h, 0.0).unwrap(), distill::fusion_loss(&p, &h).unwrap());
        prop_assert_eq!(distill::student_loss(&p, &p, &p, 0.5).unwrap(), 0.0);
        prop_assert!(distill::fusion_loss(&p, &h).unwrap() >= 0.0);
        if p != h {
            prop_assert!(distill::fusion_loss(&p, &h).unwrap() > 0.0);
        }
    }

    #[test]
    fn loss_is_affine_in_mu(ps in maps(), mu in 0.0f64..1.0) {
        let (p, s, h) = ps;
        let ls = distill::fusion_loss(&p, &s).unwrap();
        let lh = distill::fusion_loss(&p, &h).unwrap();
        let got = distill::student_loss(&p, &s, &h, mu).unwrap();
        prop_assert!((got - (mu * ls + (1.0 - mu) * lh)).abs() < 1e-5 * (1.0 + ls + lh));
    }
}

fn tiny_samples() -> Vec<ClipSample> {
    let clips = synth::generate_synthetic_corpus(3, 5, 16, 1).unwrap();
    dataset::split_samples(&clips, Split::All, 0, 16).unwrap()
}

fn tiny_cfg() -> DistillConfig {
    DistillConfig {
        resolution: 16,
        batch_size: 4,
        epochs: 4,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn student_training_reduces_loss_and_is_deterministic() {
    let samples = tiny_samples();
    let cfg = tiny_cfg();
    let spec = network::build_spatial_student(&cfg.table).unwrap();
    let init = network::init_random::<f32>(&spec, 0).unwrap();
    let mut a = init.clone();
    let ha = distill::train_phase(Phase::StudentSpatial, &mut a, &samples, &cfg, |_| {}).unwrap();
    assert!(ha.last().unwrap().loss < ha[0].loss, "{ha:?}");
    let mut b = init.clone();
    let hb = distill::train_phase(Phase::StudentSpatial, &mut b, &samples, &cfg, |_| {}).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
}

#[test]
fn zero_epochs_leave_weights_untouched() {
    let samples = tiny_samples();
    let cfg = DistillConfig { epochs: 0, ..tiny_cfg() };
    let spec = network::build_temporal_student(&cfg.table).unwrap();
    let init = network::init_random::<f32>(&spec, 0).unwrap();
    let mut w = init.clone();
    assert!(distill::train_phase(Phase::StudentTemporal, &mut w, &samples, &cfg, |_| {}).unwrap().is_empty());
    assert_eq!(w, init);
}

#[test]
fn missing_teacher_is_a_config_error() {
    let mut samples = tiny_samples();
    samples[2].teacher_t = None;
    let cfg = tiny_cfg();
    let spec = network::build_temporal_student(&cfg.table).unwrap();
    let mut w = network::init_random::<f32>(&spec, 0).unwrap();
    let r = distill::train_phase(Phase::StudentTemporal, &mut w, &samples, &cfg, |_| {});
    assert!(matches!(r, Err(Error::Config(_))));
    // at mu = 0 no teacher is needed
    let cfg0 = DistillConfig { mu: 0.0, epochs: 1, ..cfg };
    distill::train_phase(Phase::StudentTemporal, &mut w, &samples, &cfg0, |_| {}).unwrap();
}

#[test]
fn wrong_resolution_samples_are_rejected() {
    let samples = tiny_samples();
    let cfg = DistillConfig { resolution: 8, ..tiny_cfg() };
    let spec = network::build_spatial_student(&cfg.table).unwrap();
    let mut w = network::init_random::<f32>(&spec, 0).unwrap();
    assert!(distill::train_phase(Phase::StudentSpatial, &mut w, &samples, &cfg, |_| {}).is_err());
}

#[test]
fn default_table_matches_counting_script() {
    let t = LayerTable::default();
    let spec = network::build_spatiotemporal(&t).unwrap();
    assert_eq!(spec.param_count(), common::count_spatiotemporal(&t));
    assert_eq!(t.check_calibrated().unwrap(), spec.param_count());
    let w = network::init_random::<f32>(&spec, 0).unwrap();
    assert_eq!(w.numel(), spec.param_count());
    assert_eq!(network::infer_spec(&w).unwrap(), spec);
}

#[test]
fn fusion_from_students_keeps_stream_features() {
    let t = LayerTable::default();
    let s_spec = network::build_spatial_student(&t).unwrap();
    let t_spec = network::build_temporal_student(&t).unwrap();
    let st_spec = network::build_spatiotemporal(&t).unwrap();
    let sw = network::init_random::<f32>(&s_spec, 1).unwrap();
    let tw = network::init_random::<f32>(&t_spec, 2).unwrap();
    let st = network::init_from_students(&st_spec, &sw, &tw, 3).unwrap();
    let s = &tiny_samples()[0];
    let pair = s.pair();
    let fused = network::stream_features(&st_spec, &st, &[&s.frame, &pair]).unwrap();
    assert_eq!(fused[0], network::stream_features(&s_spec, &sw, &[&s.frame]).unwrap()[0]);
    assert_eq!(fused[1], network::stream_features(&t_spec, &tw, &[&pair]).unwrap()[0]);
}

#[test]
fn pipeline_is_reproducible() {
    let samples = tiny_samples();
    let cfg = DistillConfig { epochs: 1, ..tiny_cfg() };
    let a = distill::run_pipeline(&samples, &cfg, 1).unwrap();
    let b = distill::run_pipeline(&samples, &cfg, 1).unwrap();
    assert_eq!(a.fused, b.fused);
    assert_eq!(a.fusion_history, b.fusion_history);
    let (x, _) = distill::run_ablation(&samples, &cfg).unwrap();
    assert_ne!(x, a.fused);
}
