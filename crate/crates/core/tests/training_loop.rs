//! Training-loop contracts: losses trend down and checkpoint resume is
//! bit-exact.

use patchprior::model::{self, Arch};
use patchprior::phantoms::{generate_dataset, Family, PhantomSpec};
use patchprior::training::{run_training, train, TrainConfig};
use patchprior::tensor::{AdamHyperParams, AdamState};

fn small_arch() -> Arch {
    Arch {
        image_channels: 1,
        positional: true,
        base_channels: 8,
        n_blocks: 2,
        sigma_data: 0.5,
    }
}

fn median(xs: &[f32]) -> f32 {
    let mut v = xs.to_vec();
    v.sort_by(f32::total_cmp);
    v[v.len() / 2]
}

#[test]
fn dsm_loss_trends_down_over_training() {
    let spec = PhantomSpec::default();
    let ds = generate_dataset(Family::Ellipse, &spec, 0, 50).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        steps: 1000,
        lr: 1e-3,
        seed: 4,
        ..Default::default()
    };
    let (_, losses) = {
        let arch = small_arch();
        let mut m = model::build_model(&arch, cfg.seed).unwrap();
        let mut adam = AdamState::new(&m.params, AdamHyperParams::with_lr(cfg.lr));
        let losses = run_training(&mut m, &mut adam, &ds, &cfg, None).unwrap();
        (m, losses)
    };
    let early = median(&losses[..100]);
    let late = median(&losses[900..]);
    assert!(
        late < early,
        "median loss should fall: early {early} vs late {late}"
    );
}

#[test]
fn resumed_run_is_bit_identical_to_uninterrupted_run() {
    let spec = PhantomSpec {
        image_size: 32,
        ..Default::default()
    };
    let ds = generate_dataset(Family::Ellipse, &spec, 0, 10).unwrap();
    let arch = small_arch();
    let cfg = |steps: usize| TrainConfig {
        batch_size: 4,
        steps,
        lr: 1e-3,
        seed: 21,
        ..Default::default()
    };

    // uninterrupted: 12 steps
    let (m_full, _) = train(&arch, &ds, &cfg(12), None).unwrap();

    // interrupted: 6 steps, checkpoint, reload, 6 more
    let dir = std::env::temp_dir().join("patchprior_resume_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("half.ckpt");
    let (m_half, adam_half) = train(&arch, &ds, &cfg(6), None).unwrap();
    model::save_checkpoint(&m_half, Some(&adam_half), &path).unwrap();
    let (mut m_resumed, adam) = model::load_checkpoint(&path).unwrap();
    let mut adam = adam.unwrap();
    run_training(&mut m_resumed, &mut adam, &ds, &cfg(6), None).unwrap();
    std::fs::remove_dir_all(&dir).ok();

    assert_eq!(m_full.step, m_resumed.step);
    for ((a, b), (ea, eb)) in m_full
        .params
        .iter()
        .zip(&m_resumed.params)
        .zip(m_full.ema.iter().zip(&m_resumed.ema))
    {
        assert_eq!(a.data(), b.data(), "parameters diverged after resume");
        assert_eq!(ea.data(), eb.data(), "ema diverged after resume");
    }
}
