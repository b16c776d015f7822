//! Assembled variants: structural audit, forward contract, whole-model fusion,
//! ablation expressibility.

mod common;

use common::{rand_tensor, tiny_config};
use fastvit_core::threads::with_threads;
use fastvit_core::zoo::{
    ablation_ladder, config_delta, config_structure_diff, hybrid_variant_parents, MixerKind, VariantConfig,
};
use fastvit_core::{build_variant, Block, BlockKind, Error, Mode, Model, ReparamNotice};

use MixerKind::{Attention as SA, Pooling as PL, RepMixer as RM};

struct Expected {
    name: &'static str,
    channels: [usize; 4],
    depths: [usize; 4],
    mixers: [MixerKind; 4],
    expansion: usize,
}

/// Architecture table of the released variants, written out independently of the presets.
const REFERENCE: [Expected; 7] = [
    Expected { name: "T8", channels: [48, 96, 192, 384], depths: [2, 2, 4, 2], mixers: [RM, RM, RM, RM], expansion: 3 },
    Expected { name: "T12", channels: [64, 128, 256, 512], depths: [2, 2, 6, 2], mixers: [RM, RM, RM, RM], expansion: 3 },
    Expected { name: "S12", channels: [64, 128, 256, 512], depths: [2, 2, 6, 2], mixers: [RM, RM, RM, RM], expansion: 4 },
    Expected { name: "SA12", channels: [64, 128, 256, 512], depths: [2, 2, 6, 2], mixers: [RM, RM, RM, SA], expansion: 4 },
    Expected { name: "SA24", channels: [64, 128, 256, 512], depths: [4, 4, 12, 4], mixers: [RM, RM, RM, SA], expansion: 4 },
    Expected { name: "SA36", channels: [64, 128, 256, 512], depths: [6, 6, 18, 6], mixers: [RM, RM, RM, SA], expansion: 4 },
    Expected { name: "MA36", channels: [76, 152, 304, 608], depths: [6, 6, 18, 6], mixers: [RM, RM, RM, SA], expansion: 4 },
];

fn mixer_kind(b: &Block) -> MixerKind {
    match b.kind() {
        BlockKind::RepMixer => RM,
        BlockKind::Attention => SA,
        BlockKind::PoolingMixer => PL,
        other => panic!("{other:?} is not a token mixer"),
    }
}

fn ffn_dims(b: &Block) -> (usize, usize) {
    match b {
        Block::ConvFfn(f) => (f.channels(), f.hidden()),
        other => panic!("expected a ConvFFN, found {:?}", other.kind()),
    }
}

#[test]
fn presets_match_the_architecture_table() {
    for e in &REFERENCE {
        let m = build_variant(e.name, 0).unwrap();
        assert_eq!(m.stages.len(), 4, "{}", e.name);
        assert_eq!(m.stem.kind(), BlockKind::Stem);
        for (i, s) in m.stages.iter().enumerate() {
            assert_eq!(s.blocks.len(), e.depths[i], "{} stage {i} depth", e.name);
            assert_eq!(s.downsample.is_some(), i > 0, "{} stage {i} downsample", e.name);
            assert_eq!(s.cpe.is_some(), e.mixers[i] == SA, "{} stage {i} cpe", e.name);
            for b in &s.blocks {
                assert_eq!(mixer_kind(&b.mixer), e.mixers[i], "{} stage {i}", e.name);
                assert_eq!(ffn_dims(&b.ffn), (e.channels[i], e.channels[i] * e.expansion), "{} stage {i}", e.name);
            }
        }
        let shapes = m.stage_shapes((256, 256)).unwrap();
        for (i, sh) in shapes.iter().enumerate() {
            assert_eq!(sh.channels, e.channels[i]);
            assert_eq!((sh.height, sh.width), (256 >> (i + 2), 256 >> (i + 2)), "{} stage {i} stride", e.name);
        }
    }
}

#[test]
fn preset_widths_double_and_depths_follow_the_ratio() {
    for name in fastvit_core::zoo::FASTVIT_PRESETS {
        let c = VariantConfig::preset(name).unwrap();
        assert!(c.channels.windows(2).all(|w| w[1] == 2 * w[0]), "{name}");
        assert!(c.follows_compute_ratio(), "{name}");
    }
}

#[test]
fn hybrid_variants_assign_mixers_per_stage() {
    let want = [
        ("V1", [RM, RM, RM, RM], false),
        ("V2", [RM, RM, RM, SA], false),
        ("V3", [RM, RM, SA, SA], false),
        ("V4", [RM, RM, RM, RM], true),
        ("V5", [RM, RM, RM, SA], true),
    ];
    for (name, mixers, lk) in want {
        let m = build_variant(name, 0).unwrap();
        let got: Vec<MixerKind> = m.stages.iter().map(|s| mixer_kind(&s.blocks[0].mixer)).collect();
        assert_eq!(got, mixers, "{name}");
        let c = &m.config;
        assert_eq!(c.ffn_dw_kernel().is_some(), lk, "{name}");
        assert_eq!(c.patch_embed_kernel() == 7, lk, "{name}");
    }
}

#[test]
fn poolformer_baseline_geometry() {
    let m = build_variant("poolformer-s12-baseline", 0).unwrap();
    assert_eq!(m.config.channels, [64, 128, 320, 512]);
    assert_eq!(m.config.depths, [2, 2, 6, 2]);
    for s in &m.stages {
        assert!(s.cpe.is_none());
        for b in &s.blocks {
            assert_eq!(b.mixer.kind(), BlockKind::PoolingMixer);
        }
    }
    let shapes = m.stage_shapes((224, 224)).unwrap();
    assert_eq!(shapes.iter().map(|s| s.height).collect::<Vec<_>>(), vec![56, 28, 14, 7]);
}

#[test]
fn unknown_preset_and_invalid_config() {
    assert!(matches!(build_variant("nosuch", 0), Err(Error::UnknownPreset(_))));
    let mut c = tiny_config();
    c.channels[3] = 60;
    assert!(matches!(build_variant(c, 0), Err(Error::Config(_))));
}

#[test]
fn forward_gives_one_row_of_logits_per_image() {
    let m = build_variant("T8", 0).unwrap();
    let y = m.forward(&rand_tensor(0, [1, 3, 256, 256])).unwrap();
    assert_eq!((y.batch, y.len, y.dim), (1, 1, 1000));
    assert!(y.data.iter().all(|v| v.is_finite()));
    let tiny = build_variant(tiny_config(), 0).unwrap();
    let y = tiny.forward(&rand_tensor(0, [3, 3, 64, 96])).unwrap();
    assert_eq!((y.batch, y.dim), (3, 10));
}

#[test]
fn zero_head_returns_its_bias() {
    let mut m = build_variant(tiny_config(), 0).unwrap();
    m.head.weight.fill(0.0);
    m.head.bias = (0..10).map(|i| i as f32 * 0.25).collect();
    let y = m.forward(&fastvit_core::Tensor::zeros([1, 3, 32, 32])).unwrap();
    assert_eq!(y.data, m.head.bias);
}

#[test]
fn bad_input_geometry_is_a_shape_error_with_a_hint() {
    let m = build_variant(tiny_config(), 0).unwrap();
    for dims in [[1, 3, 100, 96], [1, 3, 16, 16], [1, 1, 64, 64]] {
        let err = m.forward(&fastvit_core::Tensor::zeros(dims)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
        assert!(err.to_string().contains("pad or resize"), "{err}");
    }
    let err = m.forward(&fastvit_core::Tensor::zeros([1, 3, 100, 96])).unwrap_err();
    assert!(err.to_string().contains("128 x 96"), "{err}");
}

#[test]
fn builds_and_forwards_are_deterministic_across_thread_counts() {
    let a = build_variant(tiny_config(), 5).unwrap();
    let b = build_variant(tiny_config(), 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, build_variant(tiny_config(), 6).unwrap());
    let x = rand_tensor(5, [2, 3, 64, 64]);
    let reference = a.forward(&x).unwrap();
    for threads in [1, 2, 3, 8] {
        let y = with_threads(threads, || a.forward(&x).unwrap()).unwrap();
        assert_eq!(
            y.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            reference.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "{threads} threads"
        );
    }
}

#[test]
fn whole_model_fusion() {
    let mut m = build_variant(tiny_config(), 1).unwrap();
    m.randomize_statistics(2);
    let (f, notices) = m.reparameterize_with_notices().unwrap();
    assert!(notices.iter().all(|(_, n)| *n == ReparamNotice::Fused), "{notices:?}");
    assert_eq!(f.mode, Mode::Inference);
    assert!(f.is_mode_uniform() && m.is_mode_uniform());
    assert!(!f.has_batch_norm() && m.has_batch_norm());
    assert!(f.param_count() < m.param_count());
    for seed in 0..4 {
        let x = rand_tensor(seed, [1, 3, 64, 64]);
        let dev = fastvit_core::tensor::max_abs_diff(&m.forward(&x).unwrap().data, &f.forward(&x).unwrap().data);
        assert!(dev <= 1e-4, "deviation {dev:e}");
    }
    let twice = f.reparameterize().unwrap();
    assert_eq!(
        fastvit_core::archive::model_to_bytes(&twice),
        fastvit_core::archive::model_to_bytes(&f)
    );
}

#[test]
fn pooling_and_layer_norm_models_keep_working_after_fusion() {
    let base = build_variant("poolformer-s12-baseline", 0).unwrap();
    let f = base.reparameterize().unwrap();
    assert!(f.is_mode_uniform());
    let mut c = tiny_config();
    c.norm = fastvit_core::NormKind::Layer;
    let m = build_variant(c, 0).unwrap();
    let (f, notices) = m.reparameterize_with_notices().unwrap();
    assert!(notices.iter().any(|(_, n)| matches!(n, ReparamNotice::PartiallyFused(_))));
    let x = rand_tensor(0, [1, 3, 32, 32]);
    let dev = fastvit_core::tensor::max_abs_diff(&m.forward(&x).unwrap().data, &f.forward(&x).unwrap().data);
    assert!(dev <= 1e-4);
}

#[test]
fn ablation_ladder_steps_are_single_edits() {
    let ladder = ablation_ladder();
    assert_eq!(ladder.len(), 8);
    let expect: [(&[&str], &[&str]); 7] = [
        (&[], &[]),
        (&["mixers"], &["mixer"]),
        (&["channels"], &["downsample", "ffn", "mixer"]),
        (&["factorized"], &["downsample", "stem"]),
        (&["overparam_n"], &["downsample", "stem"]),
        (&["large_kernel"], &["ffn"]),
        (&["large_kernel"], &["downsample"]),
    ];
    for (w, (fields, groups)) in ladder.windows(2).zip(expect) {
        let delta = config_delta(&w[0].config, &w[1].config);
        assert_eq!(delta, fields, "{}", w[1].label);
        let diff = config_structure_diff(&w[0].config, &w[1].config).unwrap();
        assert_eq!(diff.groups().into_iter().collect::<Vec<_>>(), groups, "{}", w[1].label);
    }
    // the only rung without a config edit changes the evaluation size
    assert_eq!((ladder[0].input_size, ladder[1].input_size), (224, 256));
    assert_eq!(ladder[0].config.mixers, [PL; 4]);
}

#[test]
fn hybrid_variants_are_one_edit_from_their_parent() {
    for (child, parent) in hybrid_variant_parents() {
        let c = VariantConfig::preset(child).unwrap();
        let p = VariantConfig::preset(parent).unwrap();
        let delta = config_delta(&p, &c);
        assert_eq!(delta.len(), 1, "{parent} -> {child}: {delta:?}");
        let diff = config_structure_diff(&p, &c).unwrap();
        assert!(!diff.is_empty(), "{parent} -> {child}");
        if delta[0] == "mixers" {
            // only stages whose mixer changed are touched
            let changed: Vec<usize> = (0..4).filter(|&i| c.mixers[i] != p.mixers[i]).collect();
            assert_eq!(diff.stages().into_iter().collect::<Vec<_>>(), changed, "{parent} -> {child}");
            assert!(diff.groups().iter().all(|g| ["mixer", "cpe"].contains(g)));
        }
    }
}

#[test]
fn ladder_rungs_build_and_run() {
    for step in ablation_ladder() {
        let mut c = step.config.clone();
        c.depths = [1, 1, 1, 1];
        let m = Model::build(&c, 0).unwrap();
        let y = m.reparameterize().unwrap().forward(&rand_tensor(0, [1, 3, 64, 64])).unwrap();
        assert_eq!(y.dim, 1000, "{}", step.label);
    }
}
