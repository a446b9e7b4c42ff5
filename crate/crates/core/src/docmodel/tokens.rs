//! Token counting.
//!
//! Every token-denominated quantity in the harness (answer position, document
//! length, reprompt interval, chunk size) goes through a [`TokenCounter`]. The
//! default counter is the `cl100k_base` byte-pair encoding used by GPT-4.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use tiktoken_rs::CoreBPE;

/// Counts tokens in text. Implementations must be deterministic per
/// [`identity`](TokenCounter::identity), return 0 for the empty string and at
/// least 1 for any non-empty string.
pub trait TokenCounter: Send + Sync {
    fn identity(&self) -> &str;

    fn count(&self, text: &str) -> usize;
}

/// Shared handle used throughout the pipeline.
pub type SharedCounter = Arc<dyn TokenCounter>;

/// Texts up to this many bytes have their counts memoized. Page blocks are
/// counted over and over while building and prompting; whole prompts are not.
const MEMO_MAX_BYTES: usize = 16 * 1024;
const MEMO_MAX_ENTRIES: usize = 200_000;

/// The bundled GPT-4 `cl100k_base` tokenizer.
#[derive(Clone)]
pub struct Cl100kCounter {
    bpe: Arc<CoreBPE>,
    memo: Arc<Mutex<HashMap<String, usize>>>,
}

impl Cl100kCounter {
    pub const IDENTITY: &'static str = "cl100k_base";

    pub fn new() -> Self {
        let bpe = tiktoken_rs::cl100k_base().expect("bundled cl100k_base vocabulary loads");
        Self { bpe: Arc::new(bpe), memo: Arc::default() }
    }

    /// Shared counter, loading the vocabulary once per process.
    pub fn shared() -> SharedCounter {
        static COUNTER: std::sync::OnceLock<Cl100kCounter> = std::sync::OnceLock::new();
        Arc::new(COUNTER.get_or_init(Cl100kCounter::new).clone())
    }
}

impl Default for Cl100kCounter {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Cl100kCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cl100kCounter").finish()
    }
}

impl TokenCounter for Cl100kCounter {
    fn identity(&self) -> &str {
        Self::IDENTITY
    }

    fn count(&self, text: &str) -> usize {
        if text.is_empty() {
            return 0;
        }
        if text.len() > MEMO_MAX_BYTES {
            return self.bpe.encode_ordinary(text).len();
        }
        if let Some(n) = self.memo.lock().expect("token memo poisoned").get(text) {
            return *n;
        }
        let n = self.bpe.encode_ordinary(text).len();
        let mut memo = self.memo.lock().expect("token memo poisoned");
        if memo.len() >= MEMO_MAX_ENTRIES {
            memo.clear();
        }
        memo.insert(text.to_owned(), n);
        n
    }
}

/// Counts tokens in a text through a counter.
pub fn count_tokens(counter: &dyn TokenCounter, text: &str) -> usize {
    counter.count(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen from the Python `tiktoken` package (cl100k_base), an independent
    // implementation of the same encoding.
    #[test]
    fn counts_match_reference_tokenizer() {
        let c = Cl100kCounter::shared();
        assert_eq!(c.count(""), 0);
        assert_eq!(c.count("a"), 1);
        assert_eq!(c.count("hello world"), 2);
        assert_eq!(c.count("hello world hello world"), 4);
        assert_eq!(c.count("<PAGE 1>\nfoo\n</PAGE 1>"), 12);
        assert!(c.count("hello world hello world") >= c.count("hello world"));
    }

    #[test]
    fn identity_is_stable() {
        assert_eq!(Cl100kCounter::shared().identity(), "cl100k_base");
    }
}
