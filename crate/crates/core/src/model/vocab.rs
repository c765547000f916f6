use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::Problem;

pub const UNK: &str = "<unk>";

/// Word vocabulary over masked tokens. Index 0 is the shared unknown word.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Lower-cased masked tokens of `problems`, in first-seen order.
    pub fn build<'a>(problems: impl IntoIterator<Item = &'a Problem>) -> Self {
        let mut words = vec![UNK.to_string()];
        let mut index: HashMap<String, usize> = HashMap::from([(UNK.to_string(), 0)]);
        for p in problems {
            for t in p.masked_tokens() {
                let t = t.to_lowercase();
                if !index.contains_key(&t) {
                    index.insert(t.clone(), words.len());
                    words.push(t);
                }
            }
        }
        Vocab { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, problem: &Problem) -> Vec<usize> {
        problem.masked_tokens().iter().map(|t| self.id(t)).collect()
    }
}
