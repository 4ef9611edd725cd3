use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use super::{apply_merge, Normalization, SpecialTokens, TokenizerError, TokenizerModel, SPACE};

#[derive(Clone, Debug)]
pub struct BpeTrainer {
    /// Final vocabulary size, special tokens included.
    pub vocab_size: usize,
    pub special_tokens: SpecialTokens,
    pub normalization: Normalization,
}

impl BpeTrainer {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size, special_tokens: SpecialTokens::default(), normalization: Normalization::None }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedTokenizer {
    pub model: TokenizerModel,
    /// Set when the corpus ran out of pairs before `vocab_size` was reached.
    pub truncated: bool,
}

type Pair = (usize, usize);

struct Word {
    symbols: Vec<usize>,
    count: i64,
}

/// Learns merges by repeatedly joining the most frequent adjacent pair.
/// Ties go to the lexicographically smallest `(left, right)` string pair.
pub fn train_bpe<I, S>(corpus: I, trainer: &BpeTrainer) -> Result<TrainedTokenizer, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let specials = trainer.special_tokens.surfaces();
    let mut word_counts: BTreeMap<String, i64> = BTreeMap::new();
    for line in corpus {
        let mut text = trainer.normalization.apply(line.as_ref());
        for s in specials.iter().filter(|s| !s.is_empty()) {
            text = text.replace(*s, " ");
        }
        for w in text.split_whitespace() {
            *word_counts.entry(w.to_string()).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let alphabet: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    let mut tokens: Vec<String> = specials.iter().map(|s| s.to_string()).collect();
    tokens.push(SPACE.to_string());
    tokens.extend(alphabet.iter().map(|c| c.to_string()));
    let minimum = tokens.len();
    if trainer.vocab_size < minimum {
        return Err(TokenizerError::VocabTooSmall { requested: trainer.vocab_size, minimum });
    }
    let mut index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

    let mut words: Vec<Word> = word_counts
        .iter()
        .map(|(w, &count)| Word { symbols: w.chars().map(|c| index[&c.to_string()]).collect(), count })
        .collect();

    let mut pair_counts: HashMap<Pair, i64> = HashMap::new();
    let mut pair_words: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.symbols.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_default() += w.count;
            pair_words.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    let mut merges = Vec::new();
    let mut truncated = false;
    while tokens.len() < trainer.vocab_size {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (&tokens[pa.0], &tokens[pa.1]);
                    let kb = (&tokens[pb.0], &tokens[pb.1]);
                    kb.cmp(&ka)
                })
            })
            .map(|(p, _)| *p);
        let Some((left, right)) = best else {
            truncated = true;
            log::warn!("corpus exhausted after {} merges; vocabulary truncated to {}", merges.len(), tokens.len());
            break;
        };
        let merged_str = format!("{}{}", tokens[left], tokens[right]);
        let merged = *index.entry(merged_str.clone()).or_insert_with(|| {
            tokens.push(merged_str);
            tokens.len() - 1
        });
        merges.push((tokens[left].clone(), tokens[right].clone()));

        let mut affected: Vec<usize> = pair_words.remove(&(left, right)).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for wi in affected {
            let w = &mut words[wi];
            let updated = apply_merge(&w.symbols, left, right, merged);
            if updated.len() == w.symbols.len() {
                continue;
            }
            for p in w.symbols.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() -= w.count;
            }
            for p in updated.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += w.count;
                pair_words.entry((p[0], p[1])).or_default().insert(wi);
            }
            w.symbols = updated;
        }
        pair_counts.remove(&(left, right));
    }

    let model = TokenizerModel::from_parts(tokens, merges, trainer.special_tokens.clone(), trainer.normalization)?;
    Ok(TrainedTokenizer { model, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_merge_on_aaab() {
        let t = train_bpe(["aaab aaab"], &BpeTrainer::new(9)).unwrap();
        assert_eq!(t.model.merges(), &[("a".to_string(), "a".to_string())]);
        assert_eq!(t.model.vocab_size(), 9);
        assert!(!t.truncated);
    }

    #[test]
    fn minimum_vocab_is_character_level() {
        let t = train_bpe(["aaab aaab"], &BpeTrainer::new(8)).unwrap();
        assert!(t.model.merges().is_empty());
        assert_eq!(t.model.vocab_size(), 8);
    }

    #[test]
    fn too_small_vocab_is_rejected() {
        assert!(matches!(
            train_bpe(["aaab"], &BpeTrainer::new(7)),
            Err(TokenizerError::VocabTooSmall { requested: 7, minimum: 8 })
        ));
    }

    #[test]
    fn repeated_word_becomes_one_token() {
        // alphabet {' ', a, b, c, d}: 10 base entries, three merges rebuild the word
        let t = train_bpe(["abcd abcd abcd"], &BpeTrainer::new(13)).unwrap();
        assert_eq!(t.model.encode("abcd"), vec![t.model.token_id("abcd").unwrap()]);
        let merges: Vec<String> = t.model.merges().iter().map(|(l, r)| format!("{l}+{r}")).collect();
        assert_eq!(merges, ["a+b", "ab+c", "abc+d"]);
    }

    #[test]
    fn exhausted_corpus_sets_truncated() {
        let t = train_bpe(["ab"], &BpeTrainer::new(50)).unwrap();
        assert!(t.truncated);
        assert_eq!(t.model.vocab_size(), 9);
    }

    #[test]
    fn specials_in_corpus_are_not_learned() {
        let t = train_bpe(["[MASK] ab [MASK]"], &BpeTrainer::new(20)).unwrap();
        assert!(t.model.merges().iter().all(|(l, r)| !l.contains('[') && !r.contains('[')));
        assert!(t.model.token_id("M").is_none());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(train_bpe(["  ", ""], &BpeTrainer::new(20)), Err(TokenizerError::EmptyCorpus)));
    }
}
