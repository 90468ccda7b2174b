mod common;

use std::collections::HashMap;

use common::{fixture_lines, load_arpa_gz};
use lmmix::corpus::{build_vocab, encode, Vocabulary};
use lmmix::ngram::{count_ngrams, estimate_kn, KnModel, KnOptions, NO_PROB};

struct Row {
    sentence: usize,
    position: usize,
    word: String,
    matched_order: usize,
    log10_prob: f64,
}

fn query_rows(name: &str) -> Vec<Row> {
    fixture_lines(name)
        .iter()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            Row {
                sentence: f[0].parse().unwrap(),
                position: f[1].parse().unwrap(),
                word: f[2].to_string(),
                matched_order: f[3].parse().unwrap(),
                log10_prob: f[4].parse().unwrap(),
            }
        })
        .collect()
}

fn check_queries(arpa: &str, tsv: &str) {
    let (vocab, model) = load_arpa_gz(arpa);
    let queries = fixture_lines("kenlm_query.txt");
    let rows = query_rows(tsv);
    let expected_rows: usize = queries
        .iter()
        .map(|l| l.split_whitespace().count() + 1)
        .sum();
    assert_eq!(rows.len(), expected_rows);

    let mut worst = 0f64;
    let mut orders_seen = vec![0usize; model.order() + 1];
    for r in &rows {
        let sent = encode(&queries[r.sentence], &vocab);
        let ids = sent.ids();
        let word = ids[r.position];
        let expected_word = vocab.lookup(&r.word).unwrap_or(vocab.unk());
        assert_eq!(word, expected_word, "row {}:{}", r.sentence, r.position);
        let (lp, trace) = model.score_word(&ids[..r.position], word).unwrap();
        worst = worst.max((lp - r.log10_prob).abs());
        assert!(
            (lp - r.log10_prob).abs() <= 1e-4,
            "sentence {} position {} `{}`: {lp} vs {}",
            r.sentence,
            r.position,
            r.word,
            r.log10_prob
        );
        assert_eq!(trace.matched_order, r.matched_order);
        orders_seen[r.matched_order] += 1;
    }
    // the query set exercises every order, including full matches
    assert!(orders_seen[1..].iter().all(|&c| c > 0), "{orders_seen:?}");
    assert!(worst <= 1e-4);
}

#[test]
fn trigram_queries_match_kenlm() {
    check_queries("kenlm_o3.arpa.gz", "kenlm_o3_query.tsv");
}

#[test]
fn five_gram_queries_match_kenlm() {
    check_queries("kenlm_o5.arpa.gz", "kenlm_o5_query.tsv");
}

fn by_words(vocab: &Vocabulary, model: &KnModel, n: usize) -> HashMap<Vec<String>, (f64, f64)> {
    model
        .grams(n)
        .map(|(ids, e)| {
            let words = ids
                .iter()
                .map(|&i| vocab.word(i).unwrap().to_string())
                .collect();
            (words, (e.log_prob, e.backoff.unwrap_or(0.0)))
        })
        .collect()
}

fn check_estimation(arpa: &str, order: usize) {
    let (kv, km) = load_arpa_gz(arpa);
    let lines = fixture_lines("kenlm_train.txt");
    let vocab = build_vocab(&lines, 1, None).unwrap();
    let sents: Vec<_> = lines.iter().map(|l| encode(l, &vocab)).collect();
    let counts = count_ngrams(&sents, order).unwrap();
    let ours = estimate_kn(&counts, vocab.len(), KnOptions::default()).unwrap();
    assert_eq!(vocab.len(), kv.len());
    for n in 1..=order {
        let a = by_words(&vocab, &ours, n);
        let b = by_words(&kv, &km, n);
        assert_eq!(a.len(), b.len(), "order {n}");
        for (words, (lp, bo)) in &a {
            let (klp, kbo) = b
                .get(words)
                .unwrap_or_else(|| panic!("{words:?} missing from KenLM"));
            if *lp != NO_PROB {
                assert!((lp - klp).abs() <= 1e-4, "{words:?}: p {lp} vs {klp}");
            }
            assert!((bo - kbo).abs() <= 1e-4, "{words:?}: backoff {bo} vs {kbo}");
        }
    }
}

#[test]
fn trigram_estimate_matches_kenlm() {
    check_estimation("kenlm_o3.arpa.gz", 3);
}

#[test]
fn five_gram_estimate_matches_kenlm() {
    check_estimation("kenlm_o5.arpa.gz", 5);
}
