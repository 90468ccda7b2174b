mod common;

use common::fixture_lines;
use lmmix::corpus::{build_vocab, encode, EncodedSentence};
use lmmix::ensemble::{static_cross_entropy, tune_static_lambda};
use lmmix::gating::{
    fit_normalizer, init_gate, sentence_features, train_gate, FeatureMode, GateArch, GateData,
    GateSequence, GateTrainConfig,
};
use lmmix::neural::{init_params, score_sentences, NeuralLm, NnArch};
use lmmix::ngram::{count_ngrams, estimate_kn, KnModel, KnOptions};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn experts() -> (Vec<EncodedSentence>, KnModel, NeuralLm<f32>) {
    let lines: Vec<String> = fixture_lines("kenlm_train.txt")
        .into_iter()
        .take(300)
        .collect();
    let vocab = build_vocab(&lines, 2, None).unwrap();
    let sents: Vec<_> = lines.iter().map(|l| encode(l, &vocab)).collect();
    let ng = estimate_kn(
        &count_ngrams(&sents, 3).unwrap(),
        vocab.len(),
        KnOptions::default(),
    )
    .unwrap();
    let arch = NnArch {
        vocab_size: vocab.len(),
        d_emb: 8,
        d_hid: 6,
        layers: 1,
    };
    let nn = init_params::<f32>(&arch, 3).unwrap();
    (sents, ng, nn)
}

#[test]
fn features_ignore_the_target_word() {
    let (sents, ng, nn) = experts();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab_size = nn.arch.vocab_size as u32;
    for s in sents.iter().filter(|s| s.len() >= 5).take(20) {
        let inner = s.inner();
        let pos = rng.gen_range(0..inner.len());
        let mut changed = inner.to_vec();
        changed[pos] = (changed[pos] + 1 + rng.gen_range(0..vocab_size - 4)) % (vocab_size - 3) + 3;
        assert_ne!(changed[pos], inner[pos]);
        let other = EncodedSentence::from_words(&changed).unwrap();
        let pair = [s.clone(), other];
        let scores = score_sentences(&nn, &pair, 2, true).unwrap();
        for mode in FeatureMode::ALL {
            let a = sentence_features(&ng, &scores[0], &pair[0], mode).unwrap();
            let b = sentence_features(&ng, &scores[1], &pair[1], mode).unwrap();
            assert_eq!(a.features.ncols(), mode.dim(6));
            // Step pos + 1 predicts the replaced word; it and all earlier steps
            // see the same context.
            let upto = pos + 1;
            assert_eq!(
                a.features.slice(s![..upto, ..]),
                b.features.slice(s![..upto, ..]),
                "{mode}"
            );
            assert_ne!(a.p_ng[pos], b.p_ng[pos]);
            assert!(a.features.iter().all(|v| v.is_finite()));
        }
    }
}

/// Feature 0 says which expert is better; the rest is noise.
fn synthetic(n: usize, seed: u64, informative: bool) -> GateData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs = (0..n)
        .map(|_| {
            let len = rng.gen_range(4..16);
            let mut f = Array2::from_shape_fn((len, 4), |_| rng.gen_range(-1.0..1.0));
            let (mut p_nn, mut p_ng) = (Vec::new(), Vec::new());
            for t in 0..len {
                let a: f64 = rng.gen_range(0.001..0.5);
                let b: f64 = rng.gen_range(0.001..0.5);
                let nn_wins = f[[t, 0]] > 0.0;
                if informative {
                    p_nn.push(if nn_wins { a.max(b) } else { a.min(b) });
                    p_ng.push(if nn_wins { a.min(b) } else { a.max(b) });
                } else {
                    p_nn.push(a);
                    p_ng.push(b);
                }
                f[[t, 3]] = (t as f64 + 1.0).ln();
            }
            GateSequence {
                features: f,
                p_nn,
                p_ng,
            }
        })
        .collect();
    GateData::new(4, seqs).unwrap()
}

#[test]
fn trained_gate_never_loses_to_the_static_mixture() {
    let cfg = GateTrainConfig {
        max_steps: 1500,
        ..GateTrainConfig::default()
    };
    for informative in [true, false] {
        let raw_train = synthetic(80, 1, informative);
        let raw_stop = synthetic(30, 2, informative);
        let norm = fit_normalizer(raw_train.stacked_features().view()).unwrap();
        let train = raw_train.normalized(&norm).unwrap();
        let stop = raw_stop.normalized(&norm).unwrap();
        let (p_nn, p_ng) = (train.p_nn(), train.p_ng());
        let lambda = tune_static_lambda(&p_nn, &p_ng).unwrap();
        let static_ce = static_cross_entropy(&p_nn, &p_ng, lambda).unwrap();
        for arch in GateArch::ALL {
            for seed in 1..=5 {
                let net = init_gate(arch, 4, seed, Some(lambda)).unwrap();
                let cfg = GateTrainConfig {
                    seed,
                    ..cfg.clone()
                };
                let out = train_gate(net, &train, &stop, &cfg).unwrap();
                let refs: Vec<&GateSequence> = train.sequences.iter().collect();
                let ce = out.net.mean_loss(&refs).unwrap();
                assert!(
                    ce <= static_ce + 1e-3,
                    "{arch}/{seed}: {ce} vs static {static_ce}"
                );
                if informative {
                    assert!(
                        ce < static_ce - 0.05,
                        "{arch}/{seed}: {ce} vs static {static_ce}"
                    );
                }
            }
        }
    }
}
