//! ARPA text format.

use std::io::{BufRead, Write};

use super::model::{Entry, KnModel};
use super::NO_PROB;
use crate::corpus::{Vocabulary, BOS, EOS, UNK};
use crate::{Error, Result};

pub fn write_arpa<W: Write>(model: &KnModel, vocab: &Vocabulary, mut out: W) -> Result<()> {
    if vocab.len() != model.vocab_size() {
        return Err(Error::DimensionMismatch {
            expected: model.vocab_size(),
            got: vocab.len(),
        });
    }
    writeln!(out, "\\data\\")?;
    for n in 1..=model.order() {
        writeln!(out, "ngram {}={}", n, model.num_entries(n))?;
    }
    for n in 1..=model.order() {
        writeln!(out)?;
        writeln!(out, "\\{n}-grams:")?;
        for (ids, e) in model.grams(n) {
            write!(out, "{}\t", e.log_prob)?;
            for (i, id) in ids.iter().enumerate() {
                if i > 0 {
                    out.write_all(b" ")?;
                }
                out.write_all(vocab.word(*id).unwrap_or(UNK).as_bytes())?;
            }
            if let Some(b) = e.backoff {
                write!(out, "\t{b}")?;
            }
            writeln!(out)?;
        }
    }
    writeln!(out)?;
    writeln!(out, "\\end\\")?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Arpa {
        line,
        message: message.into(),
    }
}

/// Reads an ARPA model. The vocabulary is taken from the unigram section:
/// `<s>`, `</s>`, `<unk>` get ids 0, 1, 2 and the other words follow in file
/// order. A missing `<unk>` is added with the sentinel probability.
pub fn read_arpa<R: BufRead>(input: R) -> Result<(Vocabulary, KnModel)> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = || -> Result<Option<(usize, String)>> {
        match lines.next() {
            Some((n, Ok(l))) => Ok(Some((n, l))),
            Some((_, Err(e))) => Err(e.into()),
            None => Ok(None),
        }
    };

    // header
    let mut last_line = 0;
    loop {
        let Some((n, l)) = next_line()? else {
            return Err(parse_err(last_line, "missing \\data\\ header"));
        };
        last_line = n;
        if l.trim() == "\\data\\" {
            break;
        }
    }
    let mut declared: Vec<usize> = Vec::new();
    let first_section = loop {
        let Some((n, l)) = next_line()? else {
            return Err(parse_err(last_line, "unexpected end of file in header"));
        };
        last_line = n;
        let t = l.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix("ngram ") {
            let (order, count) = rest
                .split_once('=')
                .ok_or_else(|| parse_err(n, format!("malformed count line `{t}`")))?;
            let order: usize = order
                .trim()
                .parse()
                .map_err(|_| parse_err(n, format!("bad order `{order}`")))?;
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| parse_err(n, format!("bad count `{count}`")))?;
            if order != declared.len() + 1 {
                return Err(parse_err(
                    n,
                    format!("expected ngram {} line", declared.len() + 1),
                ));
            }
            declared.push(count);
        } else if t.starts_with('\\') {
            break (n, t.to_string());
        } else {
            return Err(parse_err(n, format!("unexpected header line `{t}`")));
        }
    };
    if declared.is_empty() {
        return Err(parse_err(first_section.0, "no ngram counts in header"));
    }
    let order = declared.len();

    let mut raw: Vec<Vec<(Vec<String>, f64, Option<f64>)>> = Vec::with_capacity(order);
    let mut section = Some(first_section);
    for expected_order in 1..=order {
        let (n, header) = section.take().ok_or_else(|| {
            parse_err(
                last_line,
                format!("missing \\{expected_order}-grams: section"),
            )
        })?;
        if header != format!("\\{expected_order}-grams:") {
            return Err(parse_err(
                n,
                format!("expected \\{expected_order}-grams:, found `{header}`"),
            ));
        }
        let mut grams = Vec::with_capacity(declared[expected_order - 1]);
        loop {
            let Some((n, l)) = next_line()? else {
                return Err(parse_err(last_line, "unexpected end of file"));
            };
            last_line = n;
            let t = l.trim();
            if t.is_empty() {
                continue;
            }
            if t.starts_with('\\') {
                section = Some((n, t.to_string()));
                break;
            }
            let fields: Vec<&str> = t.split_whitespace().collect();
            let has_backoff = match fields.len() {
                k if k == expected_order + 1 => false,
                k if k == expected_order + 2 => true,
                _ => {
                    return Err(parse_err(
                        n,
                        format!("order mismatch: expected {expected_order} words in `{t}`"),
                    ))
                }
            };
            let prob: f64 = fields[0]
                .parse()
                .map_err(|_| parse_err(n, format!("non-numeric probability `{}`", fields[0])))?;
            let words: Vec<String> = fields[1..=expected_order]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let backoff = if has_backoff {
                let b = fields[expected_order + 1];
                Some(
                    b.parse::<f64>()
                        .map_err(|_| parse_err(n, format!("non-numeric back-off `{b}`")))?,
                )
            } else {
                None
            };
            grams.push((words, prob, backoff));
        }
        if grams.len() != declared[expected_order - 1] {
            return Err(parse_err(
                last_line,
                format!(
                    "header declares {} {}-grams but section has {}",
                    declared[expected_order - 1],
                    expected_order,
                    grams.len()
                ),
            ));
        }
        raw.push(grams);
    }
    match section {
        Some((_, ref t)) if t == "\\end\\" => {}
        Some((n, t)) => return Err(parse_err(n, format!("expected \\end\\, found `{t}`"))),
        None => return Err(parse_err(last_line, "missing \\end\\")),
    }

    // vocabulary from unigrams
    let mut entries: Vec<(String, u64)> = vec![(BOS.into(), 0), (EOS.into(), 0), (UNK.into(), 0)];
    let mut seen_special = [false; 3];
    for (words, _, _) in &raw[0] {
        match words[0].as_str() {
            BOS => seen_special[0] = true,
            EOS => seen_special[1] = true,
            UNK => seen_special[2] = true,
            w => entries.push((w.to_string(), 0)),
        }
    }
    if !seen_special[0] || !seen_special[1] {
        return Err(parse_err(0, "unigram section must contain <s> and </s>"));
    }
    let vocab = Vocabulary::from_entries(entries)
        .map_err(|e| parse_err(0, format!("bad unigram section: {e}")))?;
    let mut grams: Vec<Vec<(Vec<u32>, Entry)>> = raw
        .into_iter()
        .map(|list| {
            list.into_iter()
                .map(|(words, mut log_prob, backoff)| {
                    // <s> is never predicted; some writers emit 0 instead of -99
                    if words.len() == 1 && words[0] == BOS {
                        log_prob = NO_PROB;
                    }
                    let ids = words
                        .iter()
                        .map(|w| {
                            vocab.lookup(w).ok_or_else(|| {
                                parse_err(0, format!("word `{w}` missing from unigrams"))
                            })
                        })
                        .collect::<Result<Vec<u32>>>()?;
                    Ok((ids, Entry { log_prob, backoff }))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if !seen_special[2] {
        grams[0].push((
            vec![vocab.unk()],
            Entry {
                log_prob: NO_PROB,
                backoff: None,
            },
        ));
    }
    let model = KnModel::from_entries(vocab.len(), grams)?;
    Ok((vocab, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, encode};
    use crate::ngram::{count_ngrams, estimate_kn, KnOptions};

    fn toy() -> (Vocabulary, KnModel) {
        let lines = ["a b a b a c", "c b a", "a a b c"];
        let vocab = build_vocab(lines, 1, None).unwrap();
        let sents: Vec<_> = lines.iter().map(|l| encode(l, &vocab)).collect();
        let counts = count_ngrams(&sents, 3).unwrap();
        let m = estimate_kn(&counts, vocab.len(), KnOptions::default()).unwrap();
        (vocab, m)
    }

    #[test]
    fn round_trip() {
        let (v, m) = toy();
        let mut buf = Vec::new();
        write_arpa(&m, &v, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains(&format!("ngram 1={}", v.len())));
        let (v2, m2) = read_arpa(&buf[..]).unwrap();
        assert_eq!(
            v2.words().collect::<Vec<_>>(),
            v.words().collect::<Vec<_>>()
        );
        for n in 1..=3 {
            let a: Vec<_> = m.grams(n).collect();
            let b: Vec<_> = m2.grams(n).collect();
            assert_eq!(a.len(), b.len());
            for ((ia, ea), (ib, eb)) in a.iter().zip(&b) {
                assert_eq!(ia, ib);
                assert!((ea.log_prob - eb.log_prob).abs() <= 1e-6);
                assert_eq!(ea.backoff.is_some(), eb.backoff.is_some());
                if let (Some(x), Some(y)) = (ea.backoff, eb.backoff) {
                    assert!((x - y).abs() <= 1e-6);
                }
            }
        }
    }

    fn err_line(text: &str) -> usize {
        match read_arpa(text.as_bytes()) {
            Err(Error::Arpa { line, .. }) => line,
            other => panic!("expected ARPA error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs_report_lines() {
        let good =
            "\\data\\\nngram 1=3\n\n\\1-grams:\n-99\t<s>\t-0.3\n-0.5\t</s>\n-0.2\ta\n\n\\end\\\n";
        let (v, m) = read_arpa(good.as_bytes()).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(m.entry(&[v.unk()]).unwrap().log_prob, NO_PROB);

        assert_eq!(err_line("\\data\\\nngram x=3\n"), 2);
        assert_eq!(err_line(&good.replace("-0.2\ta", "abc\ta")), 7);
        assert_eq!(err_line(&good.replace("-0.2\ta", "-0.2\ta b")), 7);
        assert_eq!(err_line(&good.replace("ngram 1=3", "ngram 1=4")), 9);
        assert_eq!(err_line(&good.replace("ngram 1=3", "ngram 2=3")), 2);
    }
}
