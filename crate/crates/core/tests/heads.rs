use misinfo::checkpoint::Checkpoint;
use misinfo::heads::{count_layers, Head, HeadVariant};
use misinfo::train::{evaluate_head, train_head, LabelledVectors, TrainConfig};
use misinfo::{SeedTree, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;

/// Two well-separated Gaussian blobs in `width` dimensions.
fn blobs(n: usize, width: usize, seed: u64) -> LabelledVectors {
    let mut rng = SeedTree::new(seed).rng();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % 2;
        let centre = if c == 0 { -1.5 } else { 1.5 };
        rows.push((0..width).map(|_| centre + rng.gen_range(-0.5f32..0.5)).collect());
        labels.push(c);
    }
    LabelledVectors::from_rows(&rows, labels, width).unwrap()
}

#[test]
fn layer_counts_match_names() {
    let expected = [(HeadVariant::Mlp4, 4), (HeadVariant::Mlp4RegDrop, 4), (HeadVariant::ResNet10, 10), (HeadVariant::ResNet18, 18)];
    for (v, n) in expected {
        assert_eq!(count_layers(&v.config(64)), n, "{}", v.name());
    }
}

#[test]
fn separable_plane_is_learned_within_100_epochs() {
    for v in [HeadVariant::Mlp4, HeadVariant::Mlp4RegDrop] {
        let (train, val) = (blobs(200, 2, 1), blobs(60, 2, 2));
        let mut cfg = TrainConfig::new(3);
        cfg.max_epochs = 100;
        cfg.batch_size = 32;
        let (head, log) = train_head(&train, &val, &v.config(2), &cfg).unwrap();
        assert!(log.epochs.len() <= 100);
        let (_, acc) = evaluate_head(&head, &val, 64).unwrap();
        assert_eq!(acc, 1.0, "{}", v.name());
    }
    for v in [HeadVariant::ResNet10, HeadVariant::ResNet18] {
        let (train, val) = (blobs(200, 8, 4), blobs(60, 8, 5));
        let mut cfg = TrainConfig::new(6);
        cfg.max_epochs = 100;
        cfg.batch_size = 32;
        let (head, _) = train_head(&train, &val, &v.config(8), &cfg).unwrap();
        let (_, acc) = evaluate_head(&head, &val, 64).unwrap();
        assert_eq!(acc, 1.0, "{}", v.name());
    }
}

#[test]
fn returned_weights_have_the_lowest_val_loss() {
    let (train, val) = (blobs(80, 6, 7), blobs(40, 6, 8));
    let mut cfg = TrainConfig::new(9);
    cfg.max_epochs = 30;
    cfg.batch_size = 16;
    let (head, log) = train_head(&train, &val, &HeadVariant::Mlp4.config(6), &cfg).unwrap();
    let (loss, _) = evaluate_head(&head, &val, 64).unwrap();
    assert!((loss - log.min_val_loss().unwrap()).abs() < 1e-9);
}

#[test]
fn head_checkpoint_survives_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("head.ckpt");
    for v in HeadVariant::ALL {
        let head = Head::new(v.config(12), 12, SeedTree::new(10)).unwrap();
        head.to_checkpoint().unwrap().save(&path).unwrap();
        let back = Head::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        let x = blobs(5, 12, 11).vectors;
        assert_eq!(head.logits(&x, 5).unwrap(), back.logits(&x, 5).unwrap(), "{}", v.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zeroed_residual_branches_pass_the_skip_through(seed in 0u64..1000, width in 3usize..40, deep in any::<bool>()) {
        let v = if deep { HeadVariant::ResNet18 } else { HeadVariant::ResNet10 };
        let mut head = Head::new(v.config(width), width, SeedTree::new(seed)).unwrap();
        head.zero_residual_branches();
        let mut rng = SeedTree::new(seed + 1).rng();
        let x = Tensor::new(vec![2, width], (0..2 * width).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let mut tape = Tape::inference();
        let xv = tape.constant(x);
        let (_, trace) = head.resnet_trace(&mut tape, xv).unwrap();
        prop_assert_eq!(trace.len(), (count_layers(head.config()) - 2) / 2);
        for b in &trace {
            let (skip, out) = (tape.value(b.skip), tape.value(b.output));
            prop_assert_eq!(skip.shape(), out.shape());
            let diff = skip.data().iter().zip(out.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            // branch output is LN(0) = beta = 0
            prop_assert!(diff <= 1e-6, "diff {}", diff);
        }
    }

    #[test]
    fn predictions_do_not_depend_on_batching(seed in 0u64..1000, batch in 1usize..9) {
        let head = Head::new(HeadVariant::ResNet10.config(10), 10, SeedTree::new(seed)).unwrap();
        let x = blobs(9, 10, seed).vectors;
        let all = head.logits(&x, 9).unwrap();
        let chunked = head.logits(&x, batch).unwrap();
        let diff = all.data().iter().zip(chunked.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        prop_assert!(diff < 1e-5);
    }
}
