use rustc_hash::FxHashMap;

use super::key::{pack, MAX_ORDER};
use crate::corpus::EncodedSentence;
use crate::{Error, Result};

/// Raw n-gram occurrence counts for orders `1..=order`.
///
/// Windows never extend to the left of `<s>`: near the start of a sentence
/// the longest n-gram begins with `<s>` itself. `<s>` is never counted as a
/// unigram since it is not a prediction target.
#[derive(Debug, Clone, Default)]
pub struct NGramCounts {
    order: usize,
    vocab_size: usize,
    tables: Vec<FxHashMap<u128, u64>>,
}

impl NGramCounts {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Largest id seen plus one (a lower bound on the vocabulary size).
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn get(&self, gram: &[u32]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        self.tables[gram.len() - 1]
            .get(&pack(gram))
            .copied()
            .unwrap_or(0)
    }

    /// Table for order `n` (1-based), keyed by packed n-gram.
    pub fn table(&self, n: usize) -> &FxHashMap<u128, u64> {
        &self.tables[n - 1]
    }

    pub fn is_empty(&self) -> bool {
        self.tables.first().is_none_or(|t| t.is_empty())
    }
}

pub fn count_ngrams<'a, I>(sentences: I, order: usize) -> Result<NGramCounts>
where
    I: IntoIterator<Item = &'a EncodedSentence>,
{
    if order == 0 {
        return Err(Error::invalid("n-gram order must be >= 1"));
    }
    if order > MAX_ORDER {
        return Err(Error::invalid(format!(
            "n-gram order must be <= {MAX_ORDER}"
        )));
    }
    let mut tables: Vec<FxHashMap<u128, u64>> = vec![FxHashMap::default(); order];
    let mut vocab_size = 0usize;
    for s in sentences {
        let ids = s.ids();
        for &id in ids {
            vocab_size = vocab_size.max(id as usize + 1);
        }
        for i in 1..ids.len() {
            for n in 1..=order.min(i + 1) {
                let gram = &ids[i + 1 - n..=i];
                *tables[n - 1].entry(pack(gram)).or_default() += 1;
            }
        }
    }
    Ok(NGramCounts {
        order,
        vocab_size,
        tables,
    })
}
