//! Diagnostics over finished scoring runs: equal-mass frequency bins with
//! per-bin perplexities, capitalization of n-gram-dominant targets, and
//! Welch's t-test between run sets.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::ensemble::cross_entropy;
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 10;
/// P_ng − P_nn above this marks an n-gram-dominant step.
pub const DEFAULT_CAPITALIZATION_GAP: f64 = 0.5;

/// Vocabulary split into K buckets of roughly equal unigram mass, bucket 0
/// holding the most frequent words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBinning {
    /// Bin index per word id.
    pub bin_of: Vec<usize>,
    /// Total count per bin.
    pub bin_counts: Vec<u64>,
    /// Word types per bin.
    pub bin_types: Vec<usize>,
    pub total: u64,
}

impl FrequencyBinning {
    pub fn num_bins(&self) -> usize {
        self.bin_counts.len()
    }

    /// Fraction of the unigram mass in each bin.
    pub fn bin_mass(&self) -> Vec<f64> {
        self.bin_counts
            .iter()
            .map(|&c| c as f64 / self.total.max(1) as f64)
            .collect()
    }
}

/// Greedy sweep over words by descending count (ties by id): bin b closes
/// once the cumulative count reaches (b+1)·total/K. A word advances the
/// sweep by at most one bin, and the last words are spread so no bin is
/// left empty.
pub fn frequency_bins(counts: &[u64], k: usize) -> Result<FrequencyBinning> {
    if k == 0 {
        return Err(Error::invalid("need at least one frequency bin"));
    }
    if k > counts.len() {
        return Err(Error::invalid(format!(
            "{k} bins requested for {} word types",
            counts.len()
        )));
    }
    let total: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut bin_of = vec![0; counts.len()];
    let mut bin_counts = vec![0u64; k];
    let mut bin_types = vec![0usize; k];
    let mut bin = 0;
    let mut cum: u128 = 0;
    for (pos, &w) in order.iter().enumerate() {
        bin_of[w] = bin;
        bin_counts[bin] += counts[w];
        bin_types[bin] += 1;
        cum += u128::from(counts[w]);
        if bin + 1 < k {
            let remaining_words = order.len() - pos - 1;
            let remaining_bins = k - bin - 1;
            // cum ≥ (bin+1)·total/K, in integers.
            let reached = cum * k as u128 >= (bin as u128 + 1) * u128::from(total);
            if reached || remaining_words == remaining_bins {
                bin += 1;
            }
        }
    }
    Ok(FrequencyBinning {
        bin_of,
        bin_counts,
        bin_types,
        total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: usize,
    pub types: usize,
    pub mass: f64,
    pub targets: usize,
    /// Mean −ln p per model over the bin's targets; None for an empty bin.
    pub cross_entropy: Vec<Option<f64>>,
    pub perplexity: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub models: Vec<String>,
    /// Denominator model of the ratio columns.
    pub reference: String,
    pub bins: Vec<BinRow>,
}

impl BinReport {
    fn reference_index(&self) -> usize {
        self.models
            .iter()
            .position(|m| *m == self.reference)
            .expect("checked at construction")
    }

    /// Per-bin perplexity ratio of `model` to the reference model.
    pub fn ratio(&self, bin: usize, model: usize) -> Option<f64> {
        let r = &self.bins[bin].perplexity;
        Some(r[model]? / r[self.reference_index()]?)
    }

    pub fn to_csv(&self) -> String {
        let reference = self.reference_index();
        let mut cols = vec![
            "bin".to_string(),
            "types".into(),
            "mass".into(),
            "targets".into(),
        ];
        cols.extend(self.models.iter().map(|m| format!("ppl_{m}")));
        let ratio_models: Vec<usize> = (0..self.models.len()).filter(|&i| i != reference).collect();
        cols.extend(
            ratio_models
                .iter()
                .map(|&i| format!("ratio_{}_over_{}", self.models[i], self.reference)),
        );
        let mut s = format!(
            "# frequency bins (0 = most frequent): word types, unigram mass, test targets, per-model perplexity, perplexity ratios to {}; empty cells mark bins without targets\n",
            self.reference
        );
        s.push_str(&cols.join(","));
        s.push('\n');
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (b, row) in self.bins.iter().enumerate() {
            let mut fields = vec![
                row.bin.to_string(),
                row.types.to_string(),
                row.mass.to_string(),
                row.targets.to_string(),
            ];
            fields.extend(row.perplexity.iter().map(|&p| cell(p)));
            fields.extend(ratio_models.iter().map(|&i| cell(self.ratio(b, i))));
            let _ = writeln!(s, "{}", fields.join(","));
        }
        s
    }
}

/// Per-bin cross-entropy and perplexity of each model over test targets.
/// `models` pairs a name with one probability per target.
pub fn per_bin_report(
    targets: &[u32],
    models: &[(String, Vec<f64>)],
    binning: &FrequencyBinning,
    reference: &str,
) -> Result<BinReport> {
    if !models.iter().any(|(m, _)| m == reference) {
        return Err(Error::invalid(format!(
            "reference model `{reference}` is not among the models"
        )));
    }
    for (name, probs) in models {
        if probs.len() != targets.len() {
            return Err(Error::invalid(format!(
                "model `{name}` has {} probabilities for {} targets",
                probs.len(),
                targets.len()
            )));
        }
    }
    let k = binning.num_bins();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &w) in targets.iter().enumerate() {
        let b = *binning
            .bin_of
            .get(w as usize)
            .ok_or(Error::OutOfVocabulary {
                id: w,
                vocab_size: binning.bin_of.len(),
            })?;
        members[b].push(i);
    }
    let mass = binning.bin_mass();
    let mut bins = Vec::with_capacity(k);
    for (b, idx) in members.iter().enumerate() {
        let mut ce = Vec::with_capacity(models.len());
        for (_, probs) in models {
            ce.push(if idx.is_empty() {
                None
            } else {
                let ps: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
                Some(cross_entropy(&ps)?)
            });
        }
        bins.push(BinRow {
            bin: b,
            types: binning.bin_types[b],
            mass: mass[b],
            targets: idx.len(),
            perplexity: ce.iter().map(|c| c.map(f64::exp)).collect(),
            cross_entropy: ce,
        });
    }
    Ok(BinReport {
        models: models.iter().map(|(m, _)| m.clone()).collect(),
        reference: reference.to_string(),
        bins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapitalizationStats {
    pub threshold: f64,
    /// Alphabetic-initial targets with P_ng − P_nn > threshold.
    pub selected: usize,
    pub selected_capitalized: usize,
    /// All alphabetic-initial targets.
    pub total: usize,
    pub total_capitalized: usize,
    /// None when the selection is empty.
    pub fraction_selected: Option<f64>,
    pub fraction_overall: Option<f64>,
}

impl CapitalizationStats {
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "# capitalized share of alphabetic-initial test targets, among steps with P_ng - P_nn > threshold and overall\n\
             statistic,value\nthreshold,{}\nselected,{}\nselected_capitalized,{}\nfraction_selected,{}\ntotal,{}\ntotal_capitalized,{}\nfraction_overall,{}\n",
            self.threshold,
            self.selected,
            self.selected_capitalized,
            cell(self.fraction_selected),
            self.total,
            self.total_capitalized,
            cell(self.fraction_overall)
        )
    }
}

/// Share of capitalized words among n-gram-dominant targets versus overall.
/// Only tokens whose first character is alphabetic are counted.
pub fn capitalization_stats<S: AsRef<str>>(
    words: &[S],
    p_nn: &[f64],
    p_ng: &[f64],
    threshold: f64,
) -> Result<CapitalizationStats> {
    if words.len() != p_nn.len() || words.len() != p_ng.len() {
        return Err(Error::invalid("words and probabilities disagree in length"));
    }
    let (mut selected, mut selected_cap, mut total, mut total_cap) = (0, 0, 0, 0);
    for ((w, &a), &b) in words.iter().zip(p_nn).zip(p_ng) {
        let Some(first) = w.as_ref().chars().next().filter(|c| c.is_alphabetic()) else {
            continue;
        };
        let cap = first.is_uppercase();
        total += 1;
        total_cap += usize::from(cap);
        if b - a > threshold {
            selected += 1;
            selected_cap += usize::from(cap);
        }
    }
    let frac = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(CapitalizationStats {
        threshold,
        selected,
        selected_capitalized: selected_cap,
        total,
        total_capitalized: total_cap,
        fraction_selected: frac(selected_cap, selected),
        fraction_overall: frac(total_cap, total),
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-tailed p-value of Welch's unequal-variance t-test.
pub fn significance_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(
            "the t-test needs at least two runs per side",
        ));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_counts_split_evenly() {
        let b = frequency_bins(&[5, 5, 5, 5], 2).unwrap();
        assert_eq!(b.bin_of, vec![0, 0, 1, 1]);
        let one = frequency_bins(&[3, 1, 2], 1).unwrap();
        assert_eq!(one.bin_of, vec![0, 0, 0]);
        assert!(frequency_bins(&[3, 1], 3).is_err());
    }

    #[test]
    fn welch_edge_cases() {
        let a = [10.0, 10.1, 9.9, 10.05, 9.95];
        assert_eq!(significance_test(&a, &a).unwrap(), 1.0);
        let b = [20.0, 20.1, 19.9, 20.05, 19.95];
        assert!(significance_test(&a, &b).unwrap() < 1e-3);
        assert!(significance_test(&a[..1], &b).is_err());
        assert_eq!(significance_test(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(significance_test(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn capitalization_by_hand() {
        let words = ["The", "cat", "</s>", "Paris", "9am", "is"];
        let p_nn = [0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let p_ng = [0.7, 0.2, 0.9, 0.8, 0.9, 0.65];
        let s = capitalization_stats(&words, &p_nn, &p_ng, 0.5).unwrap();
        assert_eq!(
            (
                s.selected,
                s.selected_capitalized,
                s.total,
                s.total_capitalized
            ),
            (3, 2, 4, 2)
        );
        assert_eq!(s.fraction_selected, Some(2.0 / 3.0));
        assert_eq!(s.fraction_overall, Some(0.5));
        let lower = capitalization_stats(&["a", "b"], &[0.1, 0.1], &[0.1, 0.1], 0.5).unwrap();
        assert_eq!(
            (lower.fraction_selected, lower.fraction_overall),
            (None, Some(0.0))
        );
    }

    #[test]
    fn identical_models_give_unit_ratios() {
        let b = frequency_bins(&[0, 10, 6, 3, 1], 2).unwrap();
        let targets = [1, 2, 3, 1, 4];
        let p = vec![0.5, 0.25, 0.1, 0.4, 0.05];
        let models = vec![
            ("neural".to_string(), p.clone()),
            ("n-gram".to_string(), p.clone()),
        ];
        let r = per_bin_report(&targets, &models, &b, "neural").unwrap();
        for bin in 0..2 {
            assert_eq!(r.ratio(bin, 1), Some(1.0));
        }
        let csv = r.to_csv();
        assert!(csv.starts_with('#'));
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "bin,types,mass,targets,ppl_neural,ppl_n-gram,ratio_n-gram_over_neural"
        );
        assert!(per_bin_report(&targets, &models, &b, "static").is_err());
    }

    #[test]
    fn empty_bin_is_absent() {
        let b = frequency_bins(&[4, 4, 4, 4], 2).unwrap();
        let r = per_bin_report(
            &[0, 1],
            &[("neural".to_string(), vec![0.5, 0.5])],
            &b,
            "neural",
        )
        .unwrap();
        assert_eq!(r.bins[1].targets, 0);
        assert_eq!(r.bins[1].perplexity, vec![None]);
        assert!(r.to_csv().lines().last().unwrap().ends_with(",0,"));
    }

    proptest! {
        #[test]
        fn binning_invariants(counts in prop::collection::vec(0u64..1000, 1..60), k in 1usize..12) {
            prop_assume!(k <= counts.len());
            let b = frequency_bins(&counts, k).unwrap();
            prop_assert_eq!(b.bin_counts.iter().sum::<u64>(), counts.iter().sum::<u64>());
            prop_assert_eq!(b.bin_types.iter().sum::<usize>(), counts.len());
            prop_assert!(b.bin_types.iter().all(|&t| t > 0));
            // Higher bins never hold a more frequent word than lower bins.
            for i in 0..counts.len() {
                for j in 0..counts.len() {
                    if b.bin_of[i] < b.bin_of[j] {
                        prop_assert!(counts[i] >= counts[j]);
                    }
                }
            }
            let max = *counts.iter().max().unwrap();
            let target = b.total as f64 / k as f64;
            for &c in &b.bin_counts[..k - 1] {
                prop_assert!((c as f64 - target).abs() <= max as f64 + 1e-9 || c == 0);
            }
        }

        #[test]
        fn bins_recombine_to_global(
            steps in prop::collection::vec((0u32..20, 1e-6f64..=1.0), 1..200),
            k in 1usize..6,
        ) {
            let counts: Vec<u64> = (0..20).map(|i| (i * 7 % 13) as u64).collect();
            let b = frequency_bins(&counts, k).unwrap();
            let (targets, probs): (Vec<u32>, Vec<f64>) = steps.into_iter().unzip();
            let r = per_bin_report(&targets, &[("neural".into(), probs.clone())], &b, "neural").unwrap();
            let total: f64 = r.bins.iter().filter_map(|row| row.cross_entropy[0].map(|c| c * row.targets as f64)).sum();
            prop_assert_eq!(r.bins.iter().map(|row| row.targets).sum::<usize>(), targets.len());
            let global = cross_entropy(&probs).unwrap() * targets.len() as f64;
            prop_assert!((total - global).abs() <= 1e-9 * global.max(1.0));
        }

        #[test]
        fn capitalization_ignores_order(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let words = ["A", "b", "C", "d", "e", "F", "</s>", "g"];
            let mut rng = crate::rng::rng_from_seed(seed);
            let p_nn: Vec<f64> = (0..8).map(|i| 0.05 * i as f64).collect();
            let p_ng: Vec<f64> = (0..8).map(|i| 0.9 - 0.1 * i as f64).collect();
            let base = capitalization_stats(&words, &p_nn, &p_ng, 0.2).unwrap();
            let mut idx: Vec<usize> = (0..8).collect();
            idx.shuffle(&mut rng);
            let w: Vec<&str> = idx.iter().map(|&i| words[i]).collect();
            let a: Vec<f64> = idx.iter().map(|&i| p_nn[i]).collect();
            let b: Vec<f64> = idx.iter().map(|&i| p_ng[i]).collect();
            prop_assert_eq!(capitalization_stats(&w, &a, &b, 0.2).unwrap(), base);
        }
    }
}
