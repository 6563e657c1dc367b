use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::DataError;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const SEP: u32 = 3;
/// Placeholder id for a generic, signal-free sink slot.
pub const SINK: u32 = 4;

const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[BOS]", "[SEP]", "[SINK]"];

/// Whitespace-token vocabulary with reserved ids allocated first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Self::from_tokens(r.tokens)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        Self { tokens: v.tokens }
    }
}

impl Vocab {
    /// Rebuilds from an id-ordered token list (reserved entries included).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    /// Tokens occurring at least `min_count` times get ids, in lexicographic
    /// order after the reserved block.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Self, DataError> {
        if corpus.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for text in corpus {
            for tok in text.as_ref().split_whitespace() {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            counts
                .into_iter()
                .filter(|&(t, c)| c >= min_count && !RESERVED.contains(&t))
                .map(|(t, _)| t.to_string()),
        );
        Ok(Self::from_tokens(tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(RESERVED[UNK as usize])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reserved_first_then_tokens() {
        let v = Vocab::build(&["a b", "a"], 1).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.token(SEP), "[SEP]");
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("b"), 6);
    }

    #[test]
    fn min_count_threshold() {
        let v = Vocab::build(&["a b", "a"], 2).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn empty_corpus_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(Vocab::build(&empty, 1), Err(DataError::EmptyCorpus)));
    }

    #[test]
    fn tokenize_edge_cases() {
        let v = Vocab::build(&["a b"], 1).unwrap();
        assert!(v.tokenize("").is_empty());
        assert_eq!(v.tokenize("a a"), vec![v.id("a"), v.id("a")]);
        assert_eq!(v.tokenize("zzz"), vec![UNK]);
    }

    #[test]
    fn counting_oracle_on_random_corpus() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let corpus: Vec<String> = (0..400)
            .map(|_| {
                (0..rng.random_range(0..8))
                    .map(|_| format!("w{}", rng.random_range(0..60)))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        for min_count in [1, 3, 10, 40] {
            let v = Vocab::build(&corpus, min_count).unwrap();
            let mut counter: HashMap<String, usize> = HashMap::new();
            for line in &corpus {
                for t in line.split(' ').filter(|t| !t.is_empty()) {
                    *counter.entry(t.to_string()).or_default() += 1;
                }
            }
            let mut want: Vec<String> = counter
                .into_iter()
                .filter(|(_, c)| *c >= min_count)
                .map(|(t, _)| t)
                .collect();
            want.sort();
            assert_eq!(&v.tokens()[RESERVED.len()..], want.as_slice());
        }
    }

    proptest! {
        #[test]
        fn detokenize_inverts_tokenize(words in prop::collection::vec("[a-z]{1,5}", 1..12), pad in " {1,3}") {
            let text = words.join(&pad);
            let v = Vocab::build(std::slice::from_ref(&text), 1).unwrap();
            let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(v.detokenize(&v.tokenize(&text)), normalized);
        }
    }
}
