use churnforge::deep::{
    build_model, checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, ArchKind, ArchParams, ArchitectureConfig, Preset,
};
use churnforge::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all_kinds() -> impl Iterator<Item = ArchKind> {
    ArchKind::SEQUENCE.into_iter().chain([ArchKind::Linear])
}

fn input(batch: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new([batch, 30, 11], (0..batch * 330).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn paper_count(kind: ArchKind) -> usize {
    build_model(&ArchitectureConfig::new(kind, Preset::Paper), 0).unwrap().count_parameters()
}

fn within(count: usize, target: f64) -> bool {
    (count as f64 - target).abs() <= 0.15 * target
}

// ---------------------------------------------------------------- parameter counts

#[test]
fn transformer_paper_preset_near_1_8m() {
    let n = paper_count(ArchKind::Transformer);
    assert!((1_530_000..=2_070_000).contains(&n), "{}", n);
}

#[test]
fn inception_resnet_paper_preset_near_2_4m() {
    let n = paper_count(ArchKind::InceptionResnet);
    assert!((2_040_000..=2_760_000).contains(&n), "{}", n);
}

#[test]
fn convnext_paper_preset_near_0_8m() {
    let n = paper_count(ArchKind::Convnext);
    assert!((680_000..=920_000).contains(&n), "{}", n);
}

#[test]
fn lstm_paper_preset_near_1m() {
    let n = paper_count(ArchKind::Lstm);
    assert!((850_000..=1_150_000).contains(&n), "{}", n);
}

#[test]
fn cnn_paper_presets_near_1m() {
    for kind in [ArchKind::VggCnn, ArchKind::CnnFullWidth, ArchKind::CnnFullHeight] {
        let n = paper_count(kind);
        assert!(within(n, 1.0e6), "{} {}", kind, n);
    }
}

#[test]
fn single_dense_layer_has_48_parameters() {
    let m = build_model(&ArchitectureConfig::new(ArchKind::Linear, Preset::Desk), 0).unwrap();
    assert_eq!(m.count_parameters(), 11 * 4 + 4);
}

#[test]
fn count_is_the_sum_of_tensor_sizes() {
    for kind in all_kinds() {
        let m = build_model(&ArchitectureConfig::new(kind, Preset::Desk), 3).unwrap();
        assert_eq!(m.count_parameters(), m.params().iter().map(|p| p.data().len()).sum::<usize>());
        assert_eq!(m.params().len(), m.param_names().len());
    }
}

#[test]
fn desk_presets_are_about_a_sixteenth() {
    for kind in ArchKind::SEQUENCE {
        let desk = build_model(&ArchitectureConfig::new(kind, Preset::Desk), 0).unwrap().count_parameters() as f64;
        let ratio = paper_count(kind) as f64 / desk;
        assert!((8.0..=20.0).contains(&ratio), "{} ratio {}", kind, ratio);
    }
}

// ---------------------------------------------------------------- construction

#[test]
fn same_seed_gives_identical_parameters() {
    for kind in all_kinds() {
        let cfg = ArchitectureConfig::new(kind, Preset::Desk);
        let (a, b) = (build_model(&cfg, 11).unwrap(), build_model(&cfg, 11).unwrap());
        for (p, q) in a.params().iter().zip(b.params()) {
            assert_eq!(p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), q.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        let c = build_model(&cfg, 12).unwrap();
        assert!(a.params().iter().zip(c.params()).any(|(p, q)| p.data() != q.data()), "{}", kind);
    }
}

#[test]
fn hyperparameters_of_another_family_are_rejected() {
    let mut cfg = ArchitectureConfig::new(ArchKind::Lstm, Preset::Desk);
    cfg.params = ArchitectureConfig::new(ArchKind::VggCnn, Preset::Desk).params;
    assert!(matches!(build_model(&cfg, 0), Err(Error::Config(_))));
}

#[test]
fn dropout_bounds_depend_on_preset() {
    let paper = ArchitectureConfig::new(ArchKind::Transformer, Preset::Paper);
    assert!(build_model(&paper.clone().with_dropout(0.05), 0).is_err());
    assert!(build_model(&paper.with_dropout(0.4), 0).is_ok());
    let desk = ArchitectureConfig::new(ArchKind::Transformer, Preset::Desk);
    assert!(build_model(&desk.clone().with_dropout(0.0), 0).is_ok());
    assert!(build_model(&desk.with_dropout(0.6), 0).is_err());
}

#[test]
fn desk_preset_quarters_the_widths() {
    let cfg = ArchitectureConfig::new(ArchKind::Transformer, Preset::Desk);
    assert!(matches!(cfg.params, ArchParams::Transformer { d_model: 32, heads: 4, blocks: 8, .. }));
}

// ---------------------------------------------------------------- forward

#[test]
fn every_kind_emits_finite_b_by_4_logits() {
    let x = input(3, 1);
    for kind in all_kinds() {
        let m = build_model(&ArchitectureConfig::new(kind, Preset::Desk), 0).unwrap();
        let out = m.logits(&x).unwrap();
        assert_eq!(out.shape(), &[3, 4], "{}", kind);
        assert!(out.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn wrong_input_shape_is_a_shape_error() {
    let m = build_model(&ArchitectureConfig::new(ArchKind::Lstm, Preset::Desk), 0).unwrap();
    let x = Tensor::new([2, 30, 10], vec![0.0; 600]).unwrap();
    assert!(matches!(m.logits(&x), Err(Error::Shape(_))));
    let x = Tensor::new([2, 29, 11], vec![0.0; 638]).unwrap();
    assert!(matches!(m.logits(&x), Err(Error::Shape(_))));
}

#[test]
fn single_sample_equals_its_row_in_a_batch() {
    let x8 = input(8, 5);
    for kind in all_kinds() {
        let m = build_model(&ArchitectureConfig::new(kind, Preset::Desk), 2).unwrap();
        let batch = m.logits(&x8).unwrap();
        for r in [0, 5] {
            let x1 = Tensor::new([1, 30, 11], x8.data()[r * 330..(r + 1) * 330].to_vec()).unwrap();
            let one = m.logits(&x1).unwrap();
            for (a, b) in one.data().iter().zip(&batch.data()[r * 4..(r + 1) * 4]) {
                assert!((a - b).abs() <= 1e-9, "{} row {}: {} vs {}", kind, r, a, b);
            }
        }
    }
}

#[test]
fn transformer_rows_ignore_padding_samples() {
    let m = build_model(&ArchitectureConfig::new(ArchKind::Transformer, Preset::Desk), 4).unwrap();
    let x = input(3, 8);
    let base = m.logits(&x).unwrap();
    let mut padded = x.data().to_vec();
    padded.extend(input(5, 9).data());
    let out = m.logits(&Tensor::new([8, 30, 11], padded).unwrap()).unwrap();
    for (a, b) in base.data().iter().zip(out.data()) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn full_width_first_conv_collapses_the_feature_axis() {
    let m = build_model(&ArchitectureConfig::new(ArchKind::CnnFullWidth, Preset::Desk), 0).unwrap();
    let out = m.first_conv_output(&input(2, 0)).unwrap().unwrap();
    assert_eq!(out.shape().len(), 4);
    assert_eq!(out.shape()[3], 1);
    assert_eq!(out.shape()[2], 30);
}

#[test]
fn full_height_first_conv_collapses_the_time_axis() {
    let m = build_model(&ArchitectureConfig::new(ArchKind::CnnFullHeight, Preset::Desk), 0).unwrap();
    let out = m.first_conv_output(&input(2, 0)).unwrap().unwrap();
    assert_eq!(out.shape()[2], 1);
    assert_eq!(out.shape()[3], 11);
}

#[test]
fn sequence_kinds_have_no_first_conv() {
    for kind in [ArchKind::Lstm, ArchKind::Transformer, ArchKind::Linear] {
        let m = build_model(&ArchitectureConfig::new(kind, Preset::Desk), 0).unwrap();
        assert!(m.first_conv_output(&input(1, 0)).unwrap().is_none());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_is_b_by_4_for_any_batch(b in 1usize..=64, k in 0usize..4) {
        let kind = [ArchKind::Linear, ArchKind::VggCnn, ArchKind::CnnFullHeight, ArchKind::Lstm][k];
        let m = build_model(&ArchitectureConfig::new(kind, Preset::Desk), 0).unwrap();
        let out = m.logits(&input(b, b as u64)).unwrap();
        prop_assert_eq!(out.shape(), &[b, 4]);
    }
}

#[test]
fn heavy_kinds_emit_b_by_4_at_both_batch_extremes() {
    for kind in [ArchKind::Transformer, ArchKind::InceptionResnet, ArchKind::Convnext, ArchKind::CnnFullWidth] {
        let m = build_model(&ArchitectureConfig::new(kind, Preset::Desk), 0).unwrap();
        for b in [1, 64] {
            assert_eq!(m.logits(&input(b, 0)).unwrap().shape(), &[b, 4]);
        }
    }
}

// ---------------------------------------------------------------- checkpoints

#[test]
fn checkpoint_roundtrip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let x = input(4, 2);
    for kind in all_kinds() {
        let m = build_model(&ArchitectureConfig::new(kind, Preset::Desk), 9).unwrap();
        let path = dir.path().join(format!("{}.ckpt", kind));
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.logits(&x).unwrap().data(), m.logits(&x).unwrap().data());
        assert_eq!(checkpoint_bytes(&back).unwrap(), checkpoint_bytes(&m).unwrap());
    }
}

#[test]
fn checkpoint_starts_with_magic() {
    let m = build_model(&ArchitectureConfig::new(ArchKind::Linear, Preset::Desk), 0).unwrap();
    assert_eq!(&checkpoint_bytes(&m).unwrap()[..4], b"CKPT");
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let m = build_model(&ArchitectureConfig::new(ArchKind::VggCnn, Preset::Desk), 0).unwrap();
    let bytes = checkpoint_bytes(&m).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint_from_bytes(&bad).is_err());
    assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(checkpoint_from_bytes(&bytes[..10]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(checkpoint_from_bytes(&long).is_err());
}
