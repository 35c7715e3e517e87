use std::sync::Arc;

use image::RgbImage;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use genpriv::architectures::{
    init_weights, ArchError, ArchitectureConfig, Checkpoint, Classifier, EncoderSpec, Example, ImageClassifier,
    ImageEncoder, InitScheme, Modality, Teacher, TextClassifier, TextEncoder,
};
use genpriv::genimage::{mock_generate, ImageSize};
use genpriv::nn::params::digest;

#[derive(Debug, Clone)]
struct Toy {
    arch: ArchitectureConfig,
    vocab: usize,
    k: usize,
    seed: u64,
}

fn arb_toy() -> impl Strategy<Value = Toy> {
    (
        prop::sample::select(vec![(8usize, 2usize), (8, 4), (16, 2), (16, 8), (24, 4)]),
        1usize..3,
        prop::sample::select(vec![(8usize, 4usize), (8, 8), (16, 8), (12, 4)]),
        1usize..12,
        (2usize..6, 5usize..40, any::<u64>()),
    )
        .prop_map(|((d, heads), depth, (img, patch), emb, (k, vocab, seed))| Toy {
            arch: ArchitectureConfig {
                text_encoder: EncoderSpec { max_len: 12, ..EncoderSpec::toy_text(d, depth, heads) },
                image_encoder: EncoderSpec::toy_image(d, depth, heads, img, patch),
                fusion_heads: heads,
                fusion_ffn_mult: 2,
                embedding_dim: emb,
            },
            vocab,
            k,
            seed,
        })
}

fn example(toy: &Toy, rng: &mut ChaCha8Rng) -> Example {
    let n = rng.random_range(0..=toy.arch.text_encoder.max_len + 3);
    let tokens = (0..n).map(|_| rng.random_range(0..toy.vocab as u32)).collect();
    let spec = &toy.arch.image_encoder;
    let patches = Array2::from_shape_fn((spec.num_patches(), spec.patch_size * spec.patch_size * 3), |_| {
        rng.random_range(-1.0..1.0)
    });
    Example { id: "x".into(), tokens, patches: Some(Arc::new(patches)), label: 0 }
}

fn assert_distribution(p: &[f64]) {
    let sum: f64 = p.iter().sum();
    assert!((sum - 1.0).abs() <= 1e-6, "sum {sum}");
    assert!(p.iter().all(|&x| x > 0.0 && x.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn fused_length_and_cls_tracking(toy in arb_toy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(toy.seed);
        let teacher = Teacher::new(&toy.arch, toy.vocab, toy.k, &mut rng).unwrap();
        let ex = example(&toy, &mut rng);
        let (text_seq, _) = teacher.text_encoder.encode(&ex.tokens).unwrap();
        let (image_seq, _) = teacher.image_encoder.encode(ex.patches.as_ref().unwrap()).unwrap();
        let l_text = ex.tokens.len().min(toy.arch.text_encoder.max_len) + 1;
        prop_assert_eq!(text_seq.len(), l_text);
        prop_assert_eq!(image_seq.len(), toy.arch.image_encoder.num_patches() + 1);
        prop_assert_eq!((text_seq.cls_index, image_seq.cls_index), (0, 0));
        prop_assert_eq!((text_seq.modality, image_seq.modality), (Modality::Text, Modality::Image));
        prop_assert!(text_seq.embeddings.iter().all(|v| v.is_finite()));

        let (fused, cache) = teacher.fusion.forward(&text_seq, &image_seq).unwrap();
        prop_assert_eq!(cache.fused_len(), text_seq.len() + image_seq.len());
        let (_, tcache) = teacher.forward(&ex).unwrap();
        prop_assert_eq!(tcache.fused_len(), l_text + image_seq.len());
        prop_assert_eq!(fused.text.len(), toy.arch.text_encoder.d_model);
        prop_assert_eq!(fused.image.len(), toy.arch.text_encoder.d_model);

        // the CLS outputs depend on the tracked rows only through attention,
        // so moving the image CLS row changes the image vector
        let mut moved = image_seq.clone();
        moved.cls_index = moved.len() - 1;
        let (fused2, _) = teacher.fusion.forward(&text_seq, &moved).unwrap();
        prop_assert_eq!(&fused2.text, &fused.text);
        prop_assert_ne!(&fused2.image, &fused.image);
    }

    #[test]
    fn outputs_are_distributions_and_dims_match(toy in arb_toy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(toy.seed);
        let teacher = Teacher::new(&toy.arch, toy.vocab, toy.k, &mut rng).unwrap();
        let student = TextClassifier::new(&toy.arch, toy.vocab, toy.k, &mut rng).unwrap();
        let image = ImageClassifier::new(&toy.arch, toy.k, &mut rng).unwrap();
        let ex = example(&toy, &mut rng);
        let t = teacher.predict(&ex).unwrap();
        let s = student.predict(&ex).unwrap();
        let i = image.predict(&ex).unwrap();
        for out in [&t, &s, &i] {
            prop_assert_eq!(out.logits.len(), toy.k);
            assert_distribution(&out.probs);
            prop_assert_eq!(out.embedding.len(), toy.arch.embedding_dim);
        }
        prop_assert_eq!(teacher.embedding_dim(), student.embedding_dim());
        // deterministic given weights and input
        prop_assert_eq!(teacher.predict(&ex).unwrap(), t);
        prop_assert_eq!(student.predict(&ex).unwrap(), s);
    }
}

#[test]
fn text_encoder_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = TextEncoder::new(&EncoderSpec::toy_text(32, 2, 4), 50, &mut rng).unwrap();
    let ids: Vec<u32> = (4..20).collect();
    let (seq, _) = enc.encode(&ids).unwrap();
    assert_eq!((seq.len(), seq.d_model(), seq.cls_index), (17, 32, 0));
    let (empty, _) = enc.encode(&[]).unwrap();
    assert_eq!(empty.len(), 1);
    assert_eq!(enc.encode(&ids).unwrap().0, seq);
    assert!(enc.encode(&[50]).is_err(), "id outside the vocabulary");
}

#[test]
fn image_encoder_shapes_and_resize() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let enc = ImageEncoder::new(&EncoderSpec::toy_image(32, 2, 4, 32, 8), &mut rng).unwrap();
    let small = mock_generate("a red car", 1, ImageSize::square(32)).unwrap().pixels;
    let (seq, _) = enc.encode_image(&small).unwrap();
    assert_eq!((seq.len(), seq.d_model()), (17, 32));
    let big = mock_generate("a red car", 1, ImageSize::square(512)).unwrap().pixels;
    let (seq, _) = enc.encode_image(&big).unwrap();
    assert_eq!(seq.len(), 17);
    assert!(seq.embeddings.iter().all(|v| v.is_finite()));
    assert!(enc.encode_image(&RgbImage::new(0, 0)).is_err());
}

#[test]
fn fusion_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arch = ArchitectureConfig::toy();
    let teacher = Teacher::new(&arch, 40, 4, &mut rng).unwrap();
    let ids: Vec<u32> = (4..20).collect();
    let (text, _) = teacher.text_encoder.encode(&ids).unwrap();
    let img = mock_generate("a cat", 3, ImageSize::square(32)).unwrap().pixels;
    let (image, _) = teacher.image_encoder.encode_image(&img).unwrap();
    let (_, cache) = teacher.fusion.forward(&text, &image).unwrap();
    assert_eq!(cache.fused_len(), 34);

    // CLS-only image sequence still yields both vectors
    let mut cls_only = image.clone();
    cls_only.embeddings = image.embeddings.slice(ndarray::s![..1, ..]).to_owned();
    let (fused, cache) = teacher.fusion.forward(&text, &cls_only).unwrap();
    assert_eq!(cache.fused_len(), 18);
    assert_eq!((fused.text.len(), fused.image.len()), (32, 32));

    // permuting non-CLS text tokens changes the result
    let mut permuted = ids.clone();
    permuted.swap(0, 5);
    let (text_p, _) = teacher.text_encoder.encode(&permuted).unwrap();
    assert_ne!(teacher.fusion.forward(&text_p, &image).unwrap().0, teacher.fusion.forward(&text, &image).unwrap().0);

    // d_model mismatch
    let mut narrow = text.clone();
    narrow.embeddings = text.embeddings.slice(ndarray::s![.., ..16]).to_owned();
    assert!(matches!(teacher.fusion.forward(&narrow, &image), Err(ArchError::DimensionMismatch { .. })));

    // two different images give different teacher outputs
    let other = mock_generate("a dog", 9, ImageSize::square(32)).unwrap().pixels;
    assert_ne!(teacher.forward_image(&ids, &img).unwrap().probs, teacher.forward_image(&ids, &other).unwrap().probs);
}

#[test]
fn profiles() {
    let toy = ArchitectureConfig::toy();
    assert_eq!((toy.text_encoder.d_model, toy.text_encoder.depth, toy.embedding_dim), (32, 2, 16));
    let full = ArchitectureConfig::full_fidelity();
    assert_eq!(full.embedding_dim, 786);
    assert_eq!(full.fusion_heads, 8);
    assert!(full.validate().is_ok());
    let bad = ArchitectureConfig { text_encoder: EncoderSpec::toy_text(30, 1, 4), ..toy };
    assert!(bad.validate().is_err());
}

#[test]
fn init_schemes() {
    let arch = ArchitectureConfig::toy();
    let build = |rng: &mut ChaCha8Rng| TextClassifier::new(&arch, 30, 3, rng);
    let a = init_weights(&InitScheme::Xavier { seed: 5 }, build).unwrap();
    let b = init_weights(&InitScheme::Xavier { seed: 5 }, build).unwrap();
    let c = init_weights(&InitScheme::Xavier { seed: 6 }, build).unwrap();
    assert_eq!(digest(&a), digest(&b));
    assert_ne!(digest(&a), digest(&c));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    assert!(matches!(
        init_weights(&InitScheme::Pretrained { path: missing }, build),
        Err(ArchError::MissingAsset(_))
    ));
    let path = dir.path().join("a.ckpt");
    Checkpoint::from_model(&a, "text-classifier", serde_json::json!({})).write(&path).unwrap();
    let restored = init_weights(&InitScheme::Pretrained { path }, build).unwrap();
    assert_eq!(digest(&restored), digest(&a));
}
