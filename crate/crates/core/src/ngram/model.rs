use log::warn;
use rustc_hash::{FxHashMap, FxHashSet};

use super::counts::NGramCounts;
use super::key::{context_of, drop_first, extension_range, first_word, last_word, pack, MAX_VOCAB};
use super::stats::DistStats;
use super::NO_PROB;
use crate::corpus::BOS_ID;
use crate::{Error, Result};

/// One stored n-gram: log10 probability and, if the n-gram is a context of
/// some stored longer n-gram, its log10 back-off weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub log_prob: f64,
    pub backoff: Option<f64>,
}

/// Modified Kneser-Ney discounts for counts 1, 2 and 3+.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discounts {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Discounts {
    pub fn get(&self, count: u64) -> f64 {
        match count {
            0 => 0.0,
            1 => self.d1,
            2 => self.d2,
            _ => self.d3,
        }
    }

    /// Closed form from count-of-counts `n[k-1]` = number of n-grams with
    /// adjusted count k. Any discount whose inputs are zero or whose value
    /// falls outside `(0, k)` is replaced by `fallback`.
    pub fn from_count_of_counts(n: [u64; 4], fallback: f64) -> (Self, Vec<usize>) {
        let [n1, n2, n3, n4] = n.map(|x| x as f64);
        let y_ok = n1 > 0.0 && n2 > 0.0;
        let y = if y_ok { n1 / (n1 + 2.0 * n2) } else { 0.0 };
        let raw = [
            (y_ok, 1.0 - 2.0 * y * n2 / n1),
            (y_ok && n3 > 0.0, 2.0 - 3.0 * y * n3 / n2),
            (y_ok && n3 > 0.0 && n4 > 0.0, 3.0 - 4.0 * y * n4 / n3),
        ];
        let mut fell_back = Vec::new();
        let mut d = [0.0; 3];
        for (k, (ok, value)) in raw.into_iter().enumerate() {
            let limit = (k + 1) as f64;
            if ok && value > 0.0 && value < limit {
                d[k] = value;
            } else {
                d[k] = fallback;
                fell_back.push(k + 1);
            }
        }
        (
            Discounts {
                d1: d[0],
                d2: d[1],
                d3: d[2],
            },
            fell_back,
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KnOptions {
    /// Drop n-grams of order >= 2 whose raw count is below this value
    /// (0 or 1 disables pruning). Pruned mass moves into the back-off weight.
    pub prune_min_count: u64,
    pub fallback_discount: f64,
}

impl Default for KnOptions {
    fn default() -> Self {
        KnOptions {
            prune_min_count: 0,
            fallback_discount: 0.75,
        }
    }
}

/// What happened while scoring one word.
///
/// Every vector has exactly `order` slots; `None` marks an absent value.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTrace {
    /// Highest order whose n-gram (context suffix + word) is stored.
    pub matched_order: usize,
    /// Slot `n-1`: log10 p of the stored order-n n-gram ending in the word.
    pub log_probs: Vec<Option<f64>>,
    /// Slot `n-1`: log10 α stored on that same n-gram, i.e. the back-off
    /// weight of the next context's length-n suffix.
    pub gram_backoffs: Vec<Option<f64>>,
    /// Slot `k-1`: log10 α of the length-k context suffix, when it was
    /// multiplied in while backing off.
    pub applied_backoffs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct OrderTable {
    keys: Vec<u128>,
    entries: Vec<Entry>,
}

impl OrderTable {
    fn get(&self, key: u128) -> Option<&Entry> {
        self.keys.binary_search(&key).ok().map(|i| &self.entries[i])
    }

    fn range(&self, lo: u128, hi: u128) -> std::ops::Range<usize> {
        let a = self.keys.partition_point(|&k| k < lo);
        let b = self.keys.partition_point(|&k| k < hi);
        a..b
    }
}

/// Back-off n-gram model in ARPA form: per-order tables of log10 p and α.
#[derive(Debug, Clone, PartialEq)]
pub struct KnModel {
    order: usize,
    unigrams: Vec<Entry>,
    /// Orders 2..=order, at index n - 2.
    higher: Vec<OrderTable>,
    discounts: Vec<Discounts>,
    warnings: Vec<String>,
    summary: UnigramSummary,
}

/// Linear-space unigram facts used by [`KnModel::context_stats`].
#[derive(Debug, Clone, PartialEq)]
struct UnigramSummary {
    probs: Vec<f64>,
    /// Ids by descending probability.
    by_prob: Vec<u32>,
    sum: f64,
    /// Σ p ln p
    plogp: f64,
}

impl UnigramSummary {
    fn new(unigrams: &[Entry]) -> Self {
        let probs: Vec<f64> = unigrams.iter().map(|e| 10f64.powf(e.log_prob)).collect();
        let mut by_prob: Vec<u32> = (0..probs.len() as u32).collect();
        by_prob.sort_by(|&a, &b| {
            probs[b as usize]
                .total_cmp(&probs[a as usize])
                .then(a.cmp(&b))
        });
        UnigramSummary {
            sum: probs.iter().sum(),
            plogp: probs.iter().map(|&p| plogp(p)).sum(),
            probs,
            by_prob,
        }
    }
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

impl KnModel {
    fn assemble(
        order: usize,
        unigrams: Vec<Entry>,
        higher: Vec<OrderTable>,
        discounts: Vec<Discounts>,
        warnings: Vec<String>,
    ) -> Self {
        let summary = UnigramSummary::new(&unigrams);
        KnModel {
            order,
            unigrams,
            higher,
            discounts,
            warnings,
            summary,
        }
    }

    /// Assembles a model from per-order `(ids, entry)` lists. Unigrams must
    /// cover ids `0..vocab_size` exactly once.
    pub fn from_entries(vocab_size: usize, grams: Vec<Vec<(Vec<u32>, Entry)>>) -> Result<Self> {
        let order = grams.len();
        if order == 0 {
            return Err(Error::invalid("model needs at least unigrams"));
        }
        if vocab_size > MAX_VOCAB {
            return Err(Error::invalid(format!(
                "vocabulary larger than {MAX_VOCAB}"
            )));
        }
        let mut iter = grams.into_iter();
        let mut unigrams: Vec<Option<Entry>> = vec![None; vocab_size];
        for (ids, e) in iter.next().unwrap() {
            let id = *ids.first().ok_or_else(|| Error::invalid("empty unigram"))? as usize;
            if id >= vocab_size || unigrams[id].is_some() {
                return Err(Error::invalid(format!("bad or duplicate unigram id {id}")));
            }
            unigrams[id] = Some(e);
        }
        let unigrams = unigrams
            .into_iter()
            .enumerate()
            .map(|(i, e)| e.ok_or_else(|| Error::invalid(format!("missing unigram for id {i}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut higher = Vec::with_capacity(order.saturating_sub(1));
        for (idx, list) in iter.enumerate() {
            let n = idx + 2;
            let mut pairs: Vec<(u128, Entry)> = Vec::with_capacity(list.len());
            for (ids, e) in list {
                if ids.len() != n || ids.iter().any(|&i| i as usize >= vocab_size) {
                    return Err(Error::invalid(format!("bad {n}-gram {ids:?}")));
                }
                pairs.push((pack(&ids), e));
            }
            pairs.sort_unstable_by_key(|p| p.0);
            if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::invalid(format!("duplicate {n}-gram")));
            }
            higher.push(OrderTable {
                keys: pairs.iter().map(|p| p.0).collect(),
                entries: pairs.iter().map(|p| p.1).collect(),
            });
        }
        Ok(Self::assemble(
            order,
            unigrams,
            higher,
            Vec::new(),
            Vec::new(),
        ))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.unigrams.len()
    }

    /// Discounts used during estimation (empty for models read from ARPA).
    pub fn discounts(&self) -> &[Discounts] {
        &self.discounts
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn num_entries(&self, n: usize) -> usize {
        match n {
            1 => self.unigrams.len(),
            _ => self.higher.get(n - 2).map_or(0, |t| t.keys.len()),
        }
    }

    pub fn entry(&self, gram: &[u32]) -> Option<&Entry> {
        match gram.len() {
            0 => None,
            1 => self.unigrams.get(gram[0] as usize),
            n if n <= self.order => {
                if gram.iter().any(|&i| i as usize >= self.unigrams.len()) {
                    return None;
                }
                self.higher[n - 2].get(pack(gram))
            }
            _ => None,
        }
    }

    /// Stored n-grams of order `n` in key order.
    pub fn grams(&self, n: usize) -> Box<dyn Iterator<Item = (Vec<u32>, Entry)> + '_> {
        if n == 1 {
            Box::new(
                self.unigrams
                    .iter()
                    .enumerate()
                    .map(|(i, e)| (vec![i as u32], *e)),
            )
        } else {
            let t = &self.higher[n - 2];
            Box::new(
                t.keys
                    .iter()
                    .zip(&t.entries)
                    .map(move |(&k, e)| (super::key::unpack(k, n), *e)),
            )
        }
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        let v = self.unigrams.len();
        match ids.iter().find(|&&i| i as usize >= v) {
            Some(&id) => Err(Error::OutOfVocabulary { id, vocab_size: v }),
            None => Ok(()),
        }
    }

    fn truncate<'a>(&self, context: &'a [u32]) -> &'a [u32] {
        let keep = context.len().min(self.order - 1);
        &context[context.len() - keep..]
    }

    /// log10 P(word | context) by the back-off recursion, plus a trace of the
    /// tables touched. Only the last `order - 1` context ids matter.
    pub fn score_word(&self, context: &[u32], word: u32) -> Result<(f64, QueryTrace)> {
        self.check_ids(&[word])?;
        self.check_ids(context)?;
        let ctx = self.truncate(context);
        let n_slots = self.order;
        let mut trace = QueryTrace {
            matched_order: 1,
            log_probs: vec![None; n_slots],
            gram_backoffs: vec![None; n_slots],
            applied_backoffs: vec![None; n_slots],
        };
        let uni = &self.unigrams[word as usize];
        trace.log_probs[0] = Some(uni.log_prob);
        trace.gram_backoffs[0] = uni.backoff;
        let mut log_prob = uni.log_prob;
        let mut gram = Vec::with_capacity(ctx.len() + 1);
        for n in 2..=ctx.len() + 1 {
            gram.clear();
            gram.extend_from_slice(&ctx[ctx.len() + 1 - n..]);
            gram.push(word);
            // suffix closure: if the order-n gram is missing, no longer one exists
            let Some(e) = self.higher[n - 2].get(pack(&gram)) else {
                break;
            };
            trace.matched_order = n;
            trace.log_probs[n - 1] = Some(e.log_prob);
            trace.gram_backoffs[n - 1] = e.backoff;
            log_prob = e.log_prob;
        }
        for k in trace.matched_order..=ctx.len() {
            let suffix = &ctx[ctx.len() - k..];
            if let Some(alpha) = self.entry(suffix).and_then(|e| e.backoff) {
                trace.applied_backoffs[k - 1] = Some(alpha);
                log_prob += alpha;
            }
        }
        Ok((log_prob, trace))
    }

    /// P(w | context) for every id, in linear space. `<s>` keeps its
    /// sentinel mass (10^-99 times the applied back-off weights).
    pub fn full_distribution(&self, context: &[u32]) -> Result<Vec<f64>> {
        self.check_ids(context)?;
        let ctx = self.truncate(context);
        let mut dist: Vec<f64> = self
            .unigrams
            .iter()
            .map(|e| 10f64.powf(e.log_prob))
            .collect();
        for k in 1..=ctx.len() {
            let suffix = &ctx[ctx.len() - k..];
            let Some(e) = self.entry(suffix) else { break };
            if let Some(alpha) = e.backoff {
                let scale = 10f64.powf(alpha);
                dist.iter_mut().for_each(|p| *p *= scale);
            }
            let table = &self.higher[k - 1];
            let (lo, hi) = extension_range(pack(suffix));
            for i in table.range(lo, hi) {
                dist[last_word(table.keys[i]) as usize] = 10f64.powf(table.entries[i].log_prob);
            }
        }
        Ok(dist)
    }
}

impl KnModel {
    /// Max and entropy (nats) of P(· | context), equal to
    /// `distribution_stats(full_distribution(context))` but linear in the
    /// number of stored extensions rather than in the vocabulary size.
    pub fn context_stats(&self, context: &[u32]) -> Result<DistStats> {
        self.check_ids(context)?;
        let ctx = self.truncate(context);
        let mut depth = 0;
        while depth < ctx.len() && self.entry(&ctx[ctx.len() - depth - 1..]).is_some() {
            depth += 1;
        }
        // walk from the longest suffix down; `scale` is the product of the
        // back-off weights of all longer suffixes
        let mut seen: FxHashSet<u32> = FxHashSet::default();
        let (mut max, mut neg_entropy, mut seen_p, mut seen_plogp) = (0.0f64, 0.0, 0.0, 0.0);
        let mut scale = 1.0f64;
        for k in (1..=depth).rev() {
            let suffix = &ctx[ctx.len() - k..];
            let table = &self.higher[k - 1];
            let (lo, hi) = extension_range(pack(suffix));
            for i in table.range(lo, hi) {
                let w = last_word(table.keys[i]);
                if seen.insert(w) {
                    let p = scale * 10f64.powf(table.entries[i].log_prob);
                    max = max.max(p);
                    neg_entropy += plogp(p);
                    let u = self.summary.probs[w as usize];
                    seen_p += u;
                    seen_plogp += plogp(u);
                }
            }
            if let Some(alpha) = self.entry(suffix).and_then(|e| e.backoff) {
                scale *= 10f64.powf(alpha);
            }
        }
        let rest_p = self.summary.sum - seen_p;
        let rest_plogp = self.summary.plogp - seen_plogp;
        neg_entropy += scale * rest_plogp + scale * scale.ln() * rest_p;
        if let Some(&w) = self.summary.by_prob.iter().find(|w| !seen.contains(w)) {
            max = max.max(scale * self.summary.probs[w as usize]);
        }
        Ok(DistStats {
            max,
            entropy: (-neg_entropy).max(0.0),
        })
    }
}

/// Counts of adjusted counts 1..=4 for one order.
fn count_of_counts<'a>(counts: impl Iterator<Item = &'a u64>) -> [u64; 4] {
    let mut n = [0u64; 4];
    for &c in counts {
        if (1..=4).contains(&c) {
            n[c as usize - 1] += 1;
        }
    }
    n
}

/// Estimates an interpolated modified Kneser-Ney model and expresses it in
/// back-off form.
///
/// The highest order uses raw counts; lower orders use continuation counts
/// (number of distinct left extensions), except n-grams starting with `<s>`,
/// which cannot be extended to the left and keep raw counts. Unigrams are
/// interpolated with the uniform distribution over the `vocab_size - 1`
/// predictable types.
pub fn estimate_kn(counts: &NGramCounts, vocab_size: usize, opts: KnOptions) -> Result<KnModel> {
    let order = counts.order();
    if counts.is_empty() {
        return Err(Error::invalid("no n-gram counts"));
    }
    if vocab_size < counts.vocab_size() || vocab_size < 2 {
        return Err(Error::invalid(format!(
            "vocabulary size {vocab_size} smaller than the ids in the counts"
        )));
    }
    if vocab_size > MAX_VOCAB {
        return Err(Error::invalid(format!(
            "vocabulary larger than {MAX_VOCAB}"
        )));
    }

    // adjusted counts, sorted by key so extensions of a context are adjacent
    let mut adjusted: Vec<Vec<(u128, u64)>> = Vec::with_capacity(order);
    for n in 1..=order {
        let raw = counts.table(n);
        let mut adj: Vec<(u128, u64)> = if n == order {
            raw.iter().map(|(&k, &c)| (k, c)).collect()
        } else {
            let mut m: FxHashMap<u128, u64> = raw
                .iter()
                .filter(|(&k, _)| first_word(k, n) == BOS_ID)
                .map(|(&k, &c)| (k, c))
                .collect();
            m.reserve(raw.len().saturating_sub(m.len()));
            for &k in counts.table(n + 1).keys() {
                let suffix = drop_first(k, n + 1);
                if first_word(suffix, n) != BOS_ID {
                    *m.entry(suffix).or_default() += 1;
                }
            }
            debug_assert_eq!(m.len(), raw.len());
            m.into_iter().collect()
        };
        adj.sort_unstable_by_key(|p| p.0);
        adjusted.push(adj);
    }

    let mut warnings = Vec::new();
    let discounts: Vec<Discounts> = adjusted
        .iter()
        .enumerate()
        .map(|(i, adj)| {
            let n = count_of_counts(adj.iter().map(|p| &p.1));
            let (d, fell_back) = Discounts::from_count_of_counts(n, opts.fallback_discount);
            if !fell_back.is_empty() {
                let msg = format!(
                    "order {}: count-of-counts {:?} give no valid discount(s) {:?}; using {}",
                    i + 1,
                    n,
                    fell_back,
                    opts.fallback_discount
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            d
        })
        .collect();

    let pruned = |n: usize, key: u128| -> bool {
        opts.prune_min_count > 1 && n >= 2 && counts.table(n)[&key] < opts.prune_min_count
    };

    // unigrams
    let d = discounts[0];
    let uni = &adjusted[0];
    let denom: f64 = uni.iter().map(|p| p.1 as f64).sum();
    let mut gamma0 = 0.0;
    let mut uni_probs = vec![0.0f64; vocab_size];
    for &(k, a) in uni {
        let disc = d.get(a);
        gamma0 += disc;
        uni_probs[k as usize] = (a as f64 - disc) / denom;
    }
    gamma0 /= denom;
    let uniform = gamma0 / (vocab_size - 1) as f64;
    for (id, p) in uni_probs.iter_mut().enumerate() {
        if id as u32 != BOS_ID {
            *p += uniform;
        }
    }

    // higher orders: interpolate with the already-final lower order
    let mut gammas: Vec<FxHashMap<u128, f64>> = Vec::with_capacity(order);
    let mut tables: Vec<(Vec<u128>, Vec<f64>)> = Vec::with_capacity(order.saturating_sub(1));
    for n in 2..=order {
        let d = discounts[n - 1];
        let adj = &adjusted[n - 1];
        let mut gamma_map: FxHashMap<u128, f64> = FxHashMap::default();
        let mut keys = Vec::with_capacity(adj.len());
        let mut probs = Vec::with_capacity(adj.len());
        let mut start = 0;
        while start < adj.len() {
            let ctx = context_of(adj[start].0);
            let mut end = start;
            while end < adj.len() && context_of(adj[end].0) == ctx {
                end += 1;
            }
            let group = &adj[start..end];
            let denom: f64 = group.iter().map(|p| p.1 as f64).sum();
            let mut gamma_num = 0.0;
            let mut kept = 0usize;
            for &(k, a) in group {
                if pruned(n, k) {
                    gamma_num += a as f64;
                } else {
                    gamma_num += d.get(a);
                    kept += 1;
                }
            }
            let gamma = gamma_num / denom;
            if kept > 0 {
                gamma_map.insert(ctx, gamma);
            }
            for &(k, a) in group {
                if pruned(n, k) {
                    continue;
                }
                let lower_key = drop_first(k, n);
                let lower = if n == 2 {
                    uni_probs[lower_key as usize]
                } else {
                    let (lk, lp) = &tables[n - 3];
                    let i = lk
                        .binary_search(&lower_key)
                        .expect("suffix of a stored n-gram is stored");
                    lp[i]
                };
                keys.push(k);
                probs.push((a as f64 - d.get(a)) / denom + gamma * lower);
            }
            start = end;
        }
        gammas.push(gamma_map);
        tables.push((keys, probs));
    }

    let to_log = |p: f64| p.log10().min(0.0);
    let backoff_for = |n: usize, key: u128| -> Option<f64> {
        gammas
            .get(n - 1)
            .and_then(|m| m.get(&key))
            .map(|g| g.log10())
    };
    let unigrams: Vec<Entry> = uni_probs
        .iter()
        .enumerate()
        .map(|(id, &p)| Entry {
            log_prob: if id as u32 == BOS_ID {
                NO_PROB
            } else {
                to_log(p)
            },
            backoff: backoff_for(1, id as u128),
        })
        .collect();
    let higher = tables
        .into_iter()
        .enumerate()
        .map(|(i, (keys, probs))| {
            let n = i + 2;
            let entries = keys
                .iter()
                .zip(&probs)
                .map(|(&k, &p)| Entry {
                    log_prob: to_log(p),
                    backoff: backoff_for(n, k),
                })
                .collect();
            OrderTable { keys, entries }
        })
        .collect();

    Ok(KnModel::assemble(
        order, unigrams, higher, discounts, warnings,
    ))
}
