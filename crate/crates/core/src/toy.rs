//! Synthetic bilingual data for desk-scale experiments.
//!
//! A shared concept grammar (topics, noun/verb/adjective compatibility,
//! a few sentence templates) is realised in two languages: a Latin-script
//! source language and an Arabic-script target language that places
//! adjectives after nouns and writes digits in Arabic-Indic form. Each
//! concept has exactly one surface word per language; that mapping is the
//! planted dictionary.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::ParallelCorpus;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub seed: u64,
    pub topics: usize,
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub determiners: usize,
    pub prepositions: usize,
    /// Parallel dictionary fragments.
    pub dictionary_pairs: usize,
    /// Approximate UTF-8 size of each monolingual corpus.
    pub source_bytes: usize,
    pub target_bytes: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            topics: 10,
            nouns: 150,
            verbs: 70,
            adjectives: 60,
            determiners: 6,
            prepositions: 6,
            dictionary_pairs: 5000,
            source_bytes: 500_000,
            target_bytes: 1_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Det,
    Prep,
    Noun,
    Verb,
    Adj,
}

#[derive(Clone, Debug)]
struct Concept {
    class: Class,
    topic: usize,
    /// Compatible continuations (verbs for nouns, object nouns for verbs).
    next: Vec<usize>,
    /// Compatible adjectives (nouns) or preposition (verbs).
    modifiers: Vec<usize>,
}

/// The concept grammar plus both lexicons.
#[derive(Clone, Debug)]
pub struct ToyGrammar {
    concepts: Vec<Concept>,
    source_words: Vec<String>,
    target_words: Vec<String>,
    by_class: [Vec<usize>; 5],
    nouns_by_topic: Vec<Vec<usize>>,
    topics: usize,
}

#[derive(Clone, Copy)]
enum Item {
    Concept(usize),
    Digit(u32),
    Stop,
}

const SOURCE_CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
const SOURCE_VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
const TARGET_CONSONANTS: &[char] = &['ب', 'ت', 'ج', 'د', 'ر', 'س', 'ش', 'ف', 'ق', 'ك', 'ل', 'م', 'ن', 'ه'];
const TARGET_VOWELS: &[char] = &['ا', 'و', 'ي'];

fn make_words(n: usize, consonants: &[char], vowels: &[char], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = if out.len() < 12 { 1 } else { rng.gen_range(2..=3) };
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(*consonants.choose(rng).expect("non-empty"));
            w.push(*vowels.choose(rng).expect("non-empty"));
        }
        if rng.gen_bool(0.3) {
            w.push(*consonants.choose(rng).expect("non-empty"));
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn arabic_digit(d: u32) -> char {
    char::from_u32(0x0660 + d).expect("Arabic-Indic digit")
}

impl ToyGrammar {
    pub fn new(cfg: &ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut concepts = Vec::new();
        let mut by_class: [Vec<usize>; 5] = Default::default();
        let counts = [
            (Class::Det, cfg.determiners),
            (Class::Prep, cfg.prepositions),
            (Class::Noun, cfg.nouns),
            (Class::Verb, cfg.verbs),
            (Class::Adj, cfg.adjectives),
        ];
        for (ci, &(class, n)) in counts.iter().enumerate() {
            for k in 0..n {
                by_class[ci].push(concepts.len());
                concepts.push(Concept { class, topic: k % cfg.topics.max(1), next: Vec::new(), modifiers: Vec::new() });
            }
        }
        let topics = cfg.topics.max(1);
        let of_topic = |class: usize, t: usize, concepts: &[Concept]| -> Vec<usize> {
            by_class[class].iter().copied().filter(|&c| concepts[c].topic == t).collect()
        };
        let nouns_by_topic: Vec<Vec<usize>> = (0..topics).map(|t| of_topic(2, t, &concepts)).collect();
        let verbs_by_topic: Vec<Vec<usize>> = (0..topics).map(|t| of_topic(3, t, &concepts)).collect();
        for concept in concepts.iter_mut() {
            let t = concept.topic;
            match concept.class {
                Class::Noun => {
                    let pool = if verbs_by_topic[t].is_empty() { &by_class[3] } else { &verbs_by_topic[t] };
                    concept.next = pool.choose_multiple(&mut rng, 3).copied().collect();
                    concept.modifiers = by_class[4].choose_multiple(&mut rng, 3).copied().collect();
                }
                Class::Verb => {
                    let pool = if nouns_by_topic[t].is_empty() { &by_class[2] } else { &nouns_by_topic[t] };
                    concept.next = pool.choose_multiple(&mut rng, 4).copied().collect();
                    concept.modifiers = by_class[1].choose_multiple(&mut rng, 1).copied().collect();
                }
                _ => {}
            }
        }
        let source_words = make_words(concepts.len(), SOURCE_CONSONANTS, SOURCE_VOWELS, &mut rng);
        let target_words = make_words(concepts.len(), TARGET_CONSONANTS, TARGET_VOWELS, &mut rng);
        Self { concepts, source_words, target_words, by_class, nouns_by_topic, topics }
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    /// `(target word, source word)` for every concept.
    pub fn dictionary(&self) -> Vec<(String, String)> {
        self.target_words.iter().cloned().zip(self.source_words.iter().cloned()).collect()
    }

    fn pick(&self, rng: &mut ChaCha8Rng, preferred: &[usize], fallback_class: usize, p: f64) -> usize {
        if !preferred.is_empty() && rng.gen_bool(p) {
            *preferred.choose(rng).expect("non-empty")
        } else {
            *self.by_class[fallback_class].choose(rng).expect("class has members")
        }
    }

    /// Noun phrase in concept order `DET [ADJ] NOUN`, adjective flagged.
    fn noun_phrase(&self, rng: &mut ChaCha8Rng, noun: usize, out: &mut Vec<(Item, bool)>) {
        out.push((Item::Concept(*self.by_class[0].choose(rng).expect("determiners")), false));
        if rng.gen_bool(0.5) {
            let adj = self.pick(rng, &self.concepts[noun].modifiers, 4, 0.9);
            out.push((Item::Concept(adj), true));
        }
        out.push((Item::Concept(noun), false));
    }

    fn sentence(&self, rng: &mut ChaCha8Rng, topic: usize) -> Vec<(Item, bool)> {
        let mut s = Vec::new();
        let subject = self.pick(rng, &self.nouns_by_topic[topic], 2, 0.85);
        let verb = self.pick(rng, &self.concepts[subject].next, 3, 0.9);
        let object = self.pick(rng, &self.concepts[verb].next, 2, 0.9);
        match rng.gen_range(0..10) {
            0..=5 => {
                self.noun_phrase(rng, subject, &mut s);
                s.push((Item::Concept(verb), false));
                self.noun_phrase(rng, object, &mut s);
            }
            6..=8 => {
                self.noun_phrase(rng, subject, &mut s);
                s.push((Item::Concept(verb), false));
                let prep = self.pick(rng, &self.concepts[verb].modifiers, 1, 0.9);
                s.push((Item::Concept(prep), false));
                self.noun_phrase(rng, object, &mut s);
            }
            _ => {
                s.push((Item::Digit(rng.gen_range(1..10)), false));
                s.push((Item::Concept(subject), false));
                s.push((Item::Concept(verb), false));
            }
        }
        s.push((Item::Stop, false));
        s
    }

    fn realise_source(&self, items: &[(Item, bool)]) -> String {
        let words: Vec<String> = items
            .iter()
            .map(|(it, _)| match *it {
                Item::Concept(c) => self.source_words[c].clone(),
                Item::Digit(d) => d.to_string(),
                Item::Stop => ".".to_string(),
            })
            .collect();
        words.join(" ")
    }

    /// Target order moves each adjective after the noun it precedes.
    fn realise_target(&self, items: &[(Item, bool)]) -> String {
        let mut ordered: Vec<Item> = Vec::with_capacity(items.len());
        let mut i = 0;
        while i < items.len() {
            if items[i].1 && i + 1 < items.len() {
                ordered.push(items[i + 1].0);
                ordered.push(items[i].0);
                i += 2;
            } else {
                ordered.push(items[i].0);
                i += 1;
            }
        }
        let words: Vec<String> = ordered
            .iter()
            .map(|it| match *it {
                Item::Concept(c) => self.target_words[c].clone(),
                Item::Digit(d) => arabic_digit(d).to_string(),
                Item::Stop => ".".to_string(),
            })
            .collect();
        words.join(" ")
    }

    fn document(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<(Item, bool)>> {
        let topic = rng.gen_range(0..self.topics);
        (0..rng.gen_range(4..=10)).map(|_| self.sentence(rng, topic)).collect()
    }

    fn corpus(&self, rng: &mut ChaCha8Rng, bytes: usize, target: bool) -> Vec<String> {
        let mut docs = Vec::new();
        let mut size = 0;
        while size < bytes {
            let doc: Vec<String> =
                self.document(rng).iter().map(|s| if target { self.realise_target(s) } else { self.realise_source(s) }).collect();
            let line = doc.join(" ");
            size += line.len() + 1;
            docs.push(line);
        }
        docs
    }

    /// Short aligned fragments: single concepts (every concept at least once)
    /// and contiguous pieces of sampled sentences.
    fn dictionary_corpus(&self, rng: &mut ChaCha8Rng, pairs: usize) -> Vec<(String, String)> {
        let mut out = Vec::with_capacity(pairs);
        let mut order: Vec<usize> = (0..self.concepts.len()).collect();
        order.shuffle(rng);
        for c in order.into_iter().take(pairs) {
            let item = [(Item::Concept(c), false)];
            out.push((self.realise_target(&item), self.realise_source(&item)));
        }
        while out.len() < pairs {
            let topic = rng.gen_range(0..self.topics);
            let s = self.sentence(rng, topic);
            let s = &s[..s.len() - 1];
            let len = rng.gen_range(1..=4).min(s.len());
            let mut start = rng.gen_range(0..=s.len() - len);
            // never split an adjective from its noun
            if start > 0 && s[start - 1].1 {
                start -= 1;
            }
            let mut end = (start + len).min(s.len());
            if s[end - 1].1 && end < s.len() {
                end += 1;
            }
            let frag = &s[start..end];
            out.push((self.realise_target(frag), self.realise_source(frag)));
        }
        out
    }
}

/// Everything the ablation needs, generated from one seed.
#[derive(Clone, Debug)]
pub struct ToyData {
    pub source_corpus: Vec<String>,
    pub target_corpus: Vec<String>,
    pub parallel: ParallelCorpus,
    /// `(target word, source word)` per concept.
    pub dictionary: Vec<(String, String)>,
}

pub fn generate_toy(cfg: &ToyConfig) -> ToyData {
    let grammar = ToyGrammar::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let source_corpus = grammar.corpus(&mut rng, cfg.source_bytes, false);
    let target_corpus = grammar.corpus(&mut rng, cfg.target_bytes, true);
    let pairs = grammar.dictionary_corpus(&mut rng, cfg.dictionary_pairs);
    ToyData {
        source_corpus,
        target_corpus,
        parallel: ParallelCorpus::new(pairs).expect("generated fragments are non-empty"),
        dictionary: grammar.dictionary(),
    }
}

impl ToyData {
    /// Writes `source.txt`, `target.txt`, `parallel.tsv` and `dictionary.tsv`.
    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("source.txt"), self.source_corpus.join("\n") + "\n")?;
        std::fs::write(dir.join("target.txt"), self.target_corpus.join("\n") + "\n")?;
        std::fs::write(dir.join("parallel.tsv"), self.parallel.to_tsv())?;
        let dict: String = self.dictionary.iter().map(|(t, s)| format!("{t}\t{s}\n")).collect();
        std::fs::write(dir.join("dictionary.tsv"), dict)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyConfig {
        ToyConfig { dictionary_pairs: 400, source_bytes: 5_000, target_bytes: 5_000, ..Default::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_toy(&small());
        let b = generate_toy(&small());
        assert_eq!(a.target_corpus, b.target_corpus);
        assert_eq!(a.parallel.pairs(), b.parallel.pairs());
    }

    #[test]
    fn lexicons_are_injective_and_scripts_differ() {
        let d = generate_toy(&small()).dictionary;
        let t: HashSet<_> = d.iter().map(|p| &p.0).collect();
        let s: HashSet<_> = d.iter().map(|p| &p.1).collect();
        assert_eq!(t.len(), d.len());
        assert_eq!(s.len(), d.len());
        assert!(d.iter().all(|(t, s)| t.chars().all(|c| ('\u{0600}'..='\u{06FF}').contains(&c)) && s.is_ascii()));
    }

    #[test]
    fn fragments_have_matching_word_counts() {
        let data = generate_toy(&small());
        assert_eq!(data.parallel.len(), 400);
        for (t, s) in data.parallel.pairs() {
            assert_eq!(t.split(' ').count(), s.split(' ').count(), "{t} / {s}");
        }
    }

    #[test]
    fn corpus_sizes_are_respected() {
        let data = generate_toy(&small());
        let bytes: usize = data.target_corpus.iter().map(|l| l.len() + 1).sum();
        assert!((5_000..5_000 + 2_000).contains(&bytes));
    }
}
