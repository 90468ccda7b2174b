//! Text ingestion: whitespace tokenization, vocabulary construction and
//! deterministic dataset splits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::rng::rng_from_seed;
use crate::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

/// Bidirectional word/id map. Ids 0, 1 and 2 are always `<s>`, `</s>` and
/// `<unk>`; the remaining ids follow descending training count with
/// lexicographic tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Builds a vocabulary directly from `(word, count)` pairs in id order.
    /// The first three entries must be the special tokens.
    pub fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        if entries.len() < 3 || entries[0].0 != BOS || entries[1].0 != EOS || entries[2].0 != UNK {
            return Err(Error::invalid(
                "vocabulary must start with <s>, </s>, <unk> in that order",
            ));
        }
        let mut index = HashMap::with_capacity(entries.len());
        let mut words = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (i, (w, c)) in entries.into_iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary entry `{w}`")));
            }
            words.push(w);
            counts.push(c);
        }
        Ok(Vocabulary {
            words,
            index,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn bos(&self) -> u32 {
        BOS_ID
    }

    pub fn eos(&self) -> u32 {
        EOS_ID
    }

    pub fn unk(&self) -> u32 {
        UNK_ID
    }

    pub fn is_special(&self, id: u32) -> bool {
        id <= UNK_ID
    }

    /// Id of `word`, or the unknown id for out-of-vocabulary words.
    pub fn id(&self, word: &str) -> u32 {
        match word {
            // sentence markers are never legal inside a sentence
            BOS | EOS => UNK_ID,
            _ => self.index.get(word).copied().unwrap_or(UNK_ID),
        }
    }

    pub fn lookup(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// One `word<TAB>count` line per entry, ordered by id.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (w, c) in self.words.iter().zip(&self.counts) {
            writeln!(out, "{w}\t{c}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let (w, c) = line.split_once('\t').ok_or_else(|| Error::Format {
                path: "vocabulary".into(),
                message: format!("line {}: expected word<TAB>count", lineno + 1),
            })?;
            let c = c.parse::<u64>().map_err(|_| Error::Format {
                path: "vocabulary".into(),
                message: format!("line {}: bad count `{c}`", lineno + 1),
            })?;
            entries.push((w.to_string(), c));
        }
        Self::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_tsv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_tsv(BufReader::new(f))
    }
}

/// Builds a vocabulary from whitespace-tokenized lines.
///
/// Words seen fewer than `min_count` times are dropped (their occurrences are
/// credited to `<unk>`); `max_size` then caps the total size, specials
/// included, keeping the most frequent words.
pub fn build_vocab<I, S>(lines: I, min_count: u64, max_size: Option<usize>) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_count < 1 {
        return Err(Error::invalid("min_count must be >= 1"));
    }
    if let Some(m) = max_size {
        if m < 3 {
            return Err(Error::invalid(format!(
                "max_size {m} cannot hold the three special tokens"
            )));
        }
    }
    let mut freq: HashMap<String, u64> = HashMap::new();
    let mut n_lines = 0u64;
    let mut n_tokens = 0u64;
    let mut unk_count = 0u64;
    for line in lines {
        n_lines += 1;
        for tok in line.as_ref().split_whitespace() {
            n_tokens += 1;
            match tok {
                BOS | EOS | UNK => unk_count += 1,
                _ => *freq.entry(tok.to_string()).or_default() += 1,
            }
        }
    }
    if n_lines == 0 || n_tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let cap = max_size.map(|m| m - 3).unwrap_or(usize::MAX);
    let mut entries = vec![
        (BOS.to_string(), n_lines),
        (EOS.to_string(), n_lines),
        (UNK.to_string(), 0),
    ];
    for (i, (w, c)) in ranked.into_iter().enumerate() {
        if c >= min_count && i < cap {
            entries.push((w, c));
        } else {
            unk_count += c;
        }
    }
    entries[UNK_ID as usize].1 = unk_count;
    Vocabulary::from_entries(entries)
}

/// Token ids of one sentence, framed by `<s>` and `</s>`.
///
/// Prediction targets are positions `1..len`; position `t` (1-based) predicts
/// `ids[t]` from `ids[..t]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedSentence {
    ids: Vec<u32>,
}

impl EncodedSentence {
    /// Wraps already-framed ids, checking the framing invariant.
    pub fn from_ids(ids: Vec<u32>) -> Result<Self> {
        let ok = ids.len() >= 2
            && ids[0] == BOS_ID
            && ids[ids.len() - 1] == EOS_ID
            && ids[1..ids.len() - 1]
                .iter()
                .all(|&i| i != BOS_ID && i != EOS_ID);
        if !ok {
            return Err(Error::invalid(
                "sentence must be <s> ... </s> with no inner sentence markers",
            ));
        }
        Ok(EncodedSentence { ids })
    }

    /// Frames inner word ids with sentence markers.
    pub fn from_words(inner: &[u32]) -> Result<Self> {
        let mut ids = Vec::with_capacity(inner.len() + 2);
        ids.push(BOS_ID);
        ids.extend_from_slice(inner);
        ids.push(EOS_ID);
        Self::from_ids(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of prediction targets (everything except `<s>`).
    pub fn num_targets(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn targets(&self) -> &[u32] {
        &self.ids[1..]
    }

    pub fn inner(&self) -> &[u32] {
        &self.ids[1..self.ids.len() - 1]
    }
}

pub fn encode(line: &str, vocab: &Vocabulary) -> EncodedSentence {
    let mut ids = Vec::with_capacity(8);
    ids.push(BOS_ID);
    ids.extend(line.split_whitespace().map(|w| vocab.id(w)));
    ids.push(EOS_ID);
    EncodedSentence { ids }
}

/// Inverse of [`encode`] on the inner tokens.
pub fn decode(sentence: &EncodedSentence, vocab: &Vocabulary) -> Vec<String> {
    sentence
        .inner()
        .iter()
        .map(|&i| vocab.word(i).unwrap_or(UNK).to_string())
        .collect()
}

/// Size request for one named partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartSize {
    Count(usize),
    Ratio(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub parts: Vec<(String, PartSize)>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn ratios(names_and_ratios: &[(&str, f64)], seed: u64) -> Self {
        SplitSpec {
            parts: names_and_ratios
                .iter()
                .map(|(n, r)| (n.to_string(), PartSize::Ratio(*r)))
                .collect(),
            seed,
        }
    }

    pub fn counts(names_and_counts: &[(&str, usize)], seed: u64) -> Self {
        SplitSpec {
            parts: names_and_counts
                .iter()
                .map(|(n, c)| (n.to_string(), PartSize::Count(*c)))
                .collect(),
            seed,
        }
    }
}

/// Named, disjoint partitions of sentence indices (each sorted ascending).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub parts: Vec<(String, Vec<usize>)>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[usize]> {
        self.parts
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// Writes one `<name>.idx` file per partition, one line index per line.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, idx) in &self.parts {
            let path = dir.join(format!("{name}.idx"));
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(f);
            for i in idx {
                writeln!(w, "{i}").map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load_part(dir: &Path, name: &str) -> Result<Vec<usize>> {
        let path = dir.join(format!("{name}.idx"));
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            out.push(line.trim().parse().map_err(|_| Error::Format {
                path: path.display().to_string(),
                message: format!("bad index `{line}`"),
            })?);
        }
        Ok(out)
    }
}

/// Deterministically partitions `n` sentences.
///
/// Ratio partitions are normalized and sized by largest remainder so the
/// partitions always cover the corpus; count partitions must not exceed it
/// and, when all sizes are counts, any leftover sentences go to the first
/// partition.
pub fn split_corpus(n: usize, spec: &SplitSpec) -> Result<Splits> {
    if spec.parts.is_empty() {
        return Err(Error::invalid("split spec has no partitions"));
    }
    let fixed: usize = spec
        .parts
        .iter()
        .filter_map(|(_, s)| match s {
            PartSize::Count(c) => Some(*c),
            PartSize::Ratio(_) => None,
        })
        .sum();
    if fixed > n {
        return Err(Error::invalid(format!(
            "requested {fixed} sentences but the corpus has {n}"
        )));
    }
    let ratio_total: f64 = spec
        .parts
        .iter()
        .filter_map(|(_, s)| match s {
            PartSize::Ratio(r) => Some(*r),
            PartSize::Count(_) => None,
        })
        .sum();
    for (name, s) in &spec.parts {
        if let PartSize::Ratio(r) = s {
            if !(r.is_finite() && *r >= 0.0) {
                return Err(Error::invalid(format!("bad ratio {r} for `{name}`")));
            }
        }
    }
    let remaining = n - fixed;
    let mut sizes: Vec<usize> = vec![0; spec.parts.len()];
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    let mut assigned = 0usize;
    for (i, (_, s)) in spec.parts.iter().enumerate() {
        match s {
            PartSize::Count(c) => sizes[i] = *c,
            PartSize::Ratio(r) => {
                if ratio_total <= 0.0 {
                    continue;
                }
                let exact = remaining as f64 * r / ratio_total;
                sizes[i] = exact.floor() as usize;
                assigned += sizes[i];
                remainders.push((exact - exact.floor(), i));
            }
        }
    }
    if !remainders.is_empty() {
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut left = remaining - assigned;
        for (_, i) in remainders.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[*i] += 1;
            left -= 1;
        }
    } else {
        sizes[0] += remaining;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(spec.seed));
    let mut parts = Vec::with_capacity(spec.parts.len());
    let mut start = 0;
    for ((name, _), size) in spec.parts.iter().zip(sizes) {
        let mut idx = order[start..start + size].to_vec();
        idx.sort_unstable();
        parts.push((name.clone(), idx));
        start += size;
    }
    Ok(Splits { parts })
}

/// Reads a corpus file (plain or gzip-compressed by `.gz` suffix) into lines.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(flate2::read::GzDecoder::new(f))
    } else {
        Box::new(f)
    };
    BufReader::new(reader)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vocab_min_count_one() {
        let v = build_vocab(["a b a", "b c"], 1, None).unwrap();
        assert_eq!(v.len(), 6);
        let words: Vec<_> = v.words().collect();
        assert_eq!(words, vec![BOS, EOS, UNK, "a", "b", "c"]);
        assert_eq!(v.count(v.id("a")), 2);
    }

    #[test]
    fn vocab_min_count_two_drops_rare() {
        let v = build_vocab(["a b a", "b c"], 2, None).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("c"), UNK_ID);
        assert_eq!(v.count(UNK_ID), 1);
    }

    #[test]
    fn vocab_truncation_breaks_ties_lexicographically() {
        let v = build_vocab(["z y x", "z"], 1, Some(5)).unwrap();
        let words: Vec<_> = v.words().collect();
        assert_eq!(words, vec![BOS, EOS, UNK, "z", "x"]);
    }

    #[test]
    fn vocab_errors() {
        assert!(matches!(
            build_vocab(Vec::<String>::new(), 1, None),
            Err(Error::EmptyCorpus)
        ));
        assert!(build_vocab(["a"], 1, Some(2)).is_err());
        assert!(build_vocab(["a"], 0, None).is_err());
    }

    #[test]
    fn encode_cases() {
        let v = build_vocab(["a b a", "b c"], 1, None).unwrap();
        let (a, b) = (v.id("a"), v.id("b"));
        assert_eq!(encode("a b", &v).ids(), &[BOS_ID, a, b, EOS_ID]);
        assert_eq!(encode("a z", &v).ids(), &[BOS_ID, a, UNK_ID, EOS_ID]);
        assert_eq!(encode("", &v).ids(), &[BOS_ID, EOS_ID]);
        assert_eq!(
            encode("a </s> b", &v).ids(),
            &[BOS_ID, a, UNK_ID, b, EOS_ID]
        );
    }

    #[test]
    fn vocab_tsv_round_trip() {
        let v = build_vocab(["a b a", "b c"], 1, None).unwrap();
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        assert_eq!(Vocabulary::read_tsv(&buf[..]).unwrap(), v);
    }

    #[test]
    fn split_ratios_and_determinism() {
        let spec = SplitSpec::ratios(&[("train", 80.0), ("gate", 10.0), ("test", 10.0)], 1);
        let s = split_corpus(100, &spec).unwrap();
        let sizes: Vec<_> = s.parts.iter().map(|(_, v)| v.len()).collect();
        assert_eq!(sizes, vec![80, 10, 10]);
        assert_eq!(s, split_corpus(100, &spec).unwrap());
        let other = split_corpus(100, &SplitSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(s, other);
    }

    #[test]
    fn split_counts() {
        let spec = SplitSpec::counts(&[("gate_train", 14_000), ("gate_stop", 2_000)], 3);
        let s = split_corpus(16_000, &spec).unwrap();
        assert_eq!(s.get("gate_train").unwrap().len(), 14_000);
        assert_eq!(s.get("gate_stop").unwrap().len(), 2_000);
        assert!(split_corpus(15_999, &spec).is_err());
    }

    proptest! {
        #[test]
        fn splits_partition_the_corpus(
            n in 0usize..400,
            ratios in proptest::collection::vec(0.01f64..10.0, 1..6),
            seed in any::<u64>(),
        ) {
            let parts: Vec<(String, PartSize)> = ratios
                .iter()
                .enumerate()
                .map(|(i, r)| (format!("p{i}"), PartSize::Ratio(*r)))
                .collect();
            let s = split_corpus(n, &SplitSpec { parts, seed }).unwrap();
            let mut all: Vec<usize> = s.parts.iter().flat_map(|(_, v)| v.iter().copied()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn encode_decode_identity(words in proptest::collection::vec("[a-e]{1,3}", 0..12)) {
            let line = words.join(" ");
            let v = build_vocab([line.as_str(), "x"], 1, None).unwrap();
            let enc = encode(&line, &v);
            prop_assert_eq!(decode(&enc, &v), words);
            let ids: Vec<u32> = v.words().map(|w| v.lookup(w).unwrap()).collect();
            prop_assert_eq!(ids, (0..v.len() as u32).collect::<Vec<_>>());
        }
    }
}
