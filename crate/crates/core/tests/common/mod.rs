//! Helpers shared by the integration tests: fixture loading and an
//! independent Kneser-Ney reference built directly from sentence windows.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::BufReader;
use std::path::PathBuf;

use flate2::read::GzDecoder;
use lmmix::corpus::{EncodedSentence, Vocabulary};
use lmmix::ngram::{read_arpa, KnModel};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
        .join(name)
}

pub fn fixture_lines(name: &str) -> Vec<String> {
    std::fs::read_to_string(fixture(name))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

pub fn load_arpa_gz(name: &str) -> (Vocabulary, KnModel) {
    let f = std::fs::File::open(fixture(name)).unwrap();
    read_arpa(BufReader::new(GzDecoder::new(f))).unwrap()
}

/// Raw n-gram counts by brute-force enumeration of every contiguous
/// substring of length <= `order` that ends on a predicted token.
pub fn brute_counts(sentences: &[EncodedSentence], order: usize) -> HashMap<Vec<u32>, u64> {
    let mut raw = HashMap::new();
    for s in sentences {
        let ids = s.ids();
        for start in 0..ids.len() {
            for end in start + 1..=ids.len().min(start + order) {
                let g = &ids[start..end];
                // <s> only ever appears first and is never a predicted token
                if g[g.len() - 1] == 0 || g[1..].contains(&0) {
                    continue;
                }
                *raw.entry(g.to_vec()).or_insert(0) += 1;
            }
        }
    }
    raw
}

/// Interpolated modified Kneser-Ney computed straight from its definition.
pub struct KnOracle {
    order: usize,
    vocab_size: usize,
    adjusted: HashMap<Vec<u32>, u64>,
    discounts: Vec<[f64; 3]>,
    /// context -> (sum of adjusted counts, sum of discounts) over its extensions
    context_stats: HashMap<Vec<u32>, (f64, f64)>,
    /// context -> extensions with their adjusted counts
    extensions: HashMap<Vec<u32>, Vec<(u32, u64)>>,
    cache: HashMap<Vec<u32>, Vec<f64>>,
}

fn discount(d: &[f64; 3], a: u64) -> f64 {
    match a {
        0 => 0.0,
        1 => d[0],
        2 => d[1],
        _ => d[2],
    }
}

impl KnOracle {
    pub fn new(sentences: &[EncodedSentence], order: usize, vocab_size: usize) -> Self {
        let raw = brute_counts(sentences, order);
        let mut left_ext: HashMap<Vec<u32>, u64> = HashMap::new();
        for g in raw.keys() {
            if g.len() >= 2 {
                *left_ext.entry(g[1..].to_vec()).or_insert(0) += 1;
            }
        }
        let adjusted: HashMap<Vec<u32>, u64> = raw
            .iter()
            .map(|(g, &c)| {
                let a = if g.len() == order || g[0] == 0 {
                    c
                } else {
                    left_ext[g]
                };
                (g.clone(), a)
            })
            .collect();

        let mut discounts = Vec::new();
        for n in 1..=order {
            let mut coc = [0f64; 5];
            for (g, &a) in &adjusted {
                if g.len() == n && a <= 4 {
                    coc[a as usize] += 1.0;
                }
            }
            let (n1, n2, n3, n4) = (coc[1], coc[2], coc[3], coc[4]);
            let y = n1 / (n1 + 2.0 * n2);
            let cand = [
                1.0 - 2.0 * y * n2 / n1,
                2.0 - 3.0 * y * n3 / n2,
                3.0 - 4.0 * y * n4 / n3,
            ];
            let inputs_ok = [
                n1 > 0.0 && n2 > 0.0,
                n1 > 0.0 && n2 > 0.0 && n3 > 0.0,
                n1 > 0.0 && n2 > 0.0 && n3 > 0.0 && n4 > 0.0,
            ];
            let mut d = [0.75; 3];
            for k in 0..3 {
                if inputs_ok[k] && cand[k] > 0.0 && cand[k] < (k + 1) as f64 {
                    d[k] = cand[k];
                }
            }
            discounts.push(d);
        }

        let mut context_stats: HashMap<Vec<u32>, (f64, f64)> = HashMap::new();
        let mut extensions: HashMap<Vec<u32>, Vec<(u32, u64)>> = HashMap::new();
        for (g, &a) in &adjusted {
            let n = g.len();
            let ctx = g[..n - 1].to_vec();
            let st = context_stats.entry(ctx.clone()).or_insert((0.0, 0.0));
            st.0 += a as f64;
            st.1 += discount(&discounts[n - 1], a);
            extensions.entry(ctx).or_default().push((g[n - 1], a));
        }

        KnOracle {
            order,
            vocab_size,
            adjusted,
            discounts,
            context_stats,
            extensions,
            cache: HashMap::new(),
        }
    }

    pub fn discounts(&self, n: usize) -> [f64; 3] {
        self.discounts[n - 1]
    }

    pub fn adjusted(&self, gram: &[u32]) -> u64 {
        self.adjusted.get(gram).copied().unwrap_or(0)
    }

    /// P(w | context) for every id; `<s>` gets 0.
    pub fn distribution(&mut self, context: &[u32]) -> Vec<f64> {
        let keep = context.len().min(self.order - 1);
        let ctx = context[context.len() - keep..].to_vec();
        self.dist_rec(&ctx).clone()
    }

    fn dist_rec(&mut self, ctx: &[u32]) -> &Vec<f64> {
        if !self.cache.contains_key(ctx) {
            let d = self.compute(ctx);
            self.cache.insert(ctx.to_vec(), d);
        }
        &self.cache[ctx]
    }

    fn compute(&mut self, ctx: &[u32]) -> Vec<f64> {
        let n = ctx.len() + 1;
        let lower: Vec<f64> = if ctx.is_empty() {
            vec![1.0 / (self.vocab_size - 1) as f64; self.vocab_size]
        } else {
            self.dist_rec(&ctx[1..]).clone()
        };
        let Some(&(denom, disc_sum)) = self.context_stats.get(ctx) else {
            let mut out = lower;
            out[0] = 0.0;
            return out;
        };
        let gamma = disc_sum / denom;
        let mut out: Vec<f64> = lower.iter().map(|p| gamma * p).collect();
        let d = self.discounts[n - 1];
        for &(w, a) in &self.extensions[ctx] {
            out[w as usize] += (a as f64 - discount(&d, a)) / denom;
        }
        out[0] = 0.0;
        out
    }
}
