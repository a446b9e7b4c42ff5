//! Seeded synthetic passage pools with exact page token lengths.
//!
//! Used for offline runs against the simulator and for tests: every passage is
//! a run of single-token words, so page lengths are exact under the counter
//! and answers never collide with filler vocabulary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Distracter, PassagePool, PoolQuestion};
use crate::docmodel::TokenCounter;

const FILLER: &[&str] = &[
    "time", "year", "people", "way", "day", "man", "thing", "woman", "life", "child", "world", "school", "state",
    "family", "student", "group", "country", "problem", "hand", "part", "place", "case", "week", "company", "system",
    "program", "question", "work", "government", "number", "night", "point", "home", "water", "room", "mother",
    "area", "money", "story", "fact", "month", "lot", "right", "study", "book", "eye", "job", "word", "business",
    "issue", "side", "kind", "head", "house", "service", "friend", "father", "power", "hour", "game", "line", "end",
    "member", "law", "car", "city", "community", "name", "president", "team", "minute", "idea", "body",
    "information", "back", "parent", "face", "level", "office", "door", "health", "person", "art", "war",
    "history", "party", "result", "change", "morning", "reason", "research", "moment", "air", "teacher", "force",
    "education", "river", "market", "window", "garden", "table", "paper", "music", "road", "field", "report",
    "letter", "food", "plan", "town", "tree", "light", "sound", "season", "model", "price", "class", "voice",
    "north", "south", "east", "west", "small", "large", "early", "late", "young", "old", "new", "long", "short",
    "good", "great", "high", "low", "open", "public", "local", "social", "national", "simple", "common", "clear",
    "with", "from", "about", "over", "under", "after", "before", "near", "along", "across", "within", "between",
    "and", "but", "or", "so", "then", "also", "often", "still", "never", "always", "very", "quite", "almost",
];

const CODE_ADJECTIVES: &[&str] = &[
    "amber", "cobalt", "crimson", "silver", "violet", "golden", "obsidian", "ivory", "scarlet", "emerald", "saffron",
    "indigo", "copper", "jade", "onyx", "pearl", "ruby", "topaz", "azure", "bronze",
];

const CODE_NOUNS: &[&str] = &[
    "falcon", "lantern", "harbor", "comet", "glacier", "orchid", "citadel", "meadow", "beacon", "canyon", "heron",
    "quarry", "lagoon", "summit", "thicket", "voyage", "anvil", "compass", "ember", "sparrow",
];

/// Filler words that are exactly one token both alone and after a space.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<&'static str>,
}

impl Vocabulary {
    pub fn new(counter: &dyn TokenCounter) -> Self {
        let words = FILLER
            .iter()
            .copied()
            .filter(|w| counter.count(w) == 1 && counter.count(&format!(" {w}")) == 1)
            .collect();
        Self { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// `n` space-separated words drawn deterministically from `seed`.
    pub fn words(&self, seed: u64, n: usize) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample(&mut rng, n)
    }

    fn sample(&self, rng: &mut impl Rng, n: usize) -> String {
        let picked: Vec<&str> = (0..n).map(|_| *self.words.choose(rng).expect("non-empty vocabulary")).collect();
        picked.join(" ")
    }

    /// Extends `lead` with filler words until the text is exactly `tokens`
    /// tokens long (or `lead` alone when it is already longer).
    pub fn fill(&self, rng: &mut impl Rng, lead: &str, tokens: usize, counter: &dyn TokenCounter) -> String {
        let mut text = lead.to_owned();
        let mut have = counter.count(&text);
        while have < tokens {
            let extra = self.sample(rng, tokens - have);
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(&extra);
            have = counter.count(&text);
        }
        while have > tokens {
            match text.rfind(' ') {
                Some(cut) if cut >= lead.len() => text.truncate(cut),
                _ => break,
            }
            have = counter.count(&text);
        }
        text
    }
}

/// Shape of a synthetic pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureSpec {
    pub questions: usize,
    /// 1 for positioned questions, 2 or more for scattered ones.
    pub golds_per_question: usize,
    /// Tokens of page text; the rendered block adds the PAGE tags.
    pub page_text_tokens: usize,
    /// Shared distracter passages.
    pub distracters: usize,
    pub seed: u64,
}

impl FixtureSpec {
    pub fn generate(&self, counter: &dyn TokenCounter) -> Result<PassagePool, CorpusError> {
        let vocab = Vocabulary::new(counter);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut codes: Vec<String> =
            CODE_ADJECTIVES.iter().flat_map(|a| CODE_NOUNS.iter().map(move |n| format!("{a} {n}"))).collect();
        codes.shuffle(&mut rng);
        let needed = self.questions * self.golds_per_question.max(1);
        if needed > codes.len() {
            return Err(CorpusError::InvalidSweep(format!("fixture supports at most {} answer codes", codes.len())));
        }

        let mut questions = Vec::with_capacity(self.questions);
        let mut code_iter = codes.into_iter();
        for q in 1..=self.questions {
            let qid = format!("q{q}");
            let answer = code_iter.next().expect("checked above");
            let golds = if self.golds_per_question <= 1 {
                let lead = format!("The registry code assigned to project {qid} is {answer}.");
                vec![vocab.fill(&mut rng, &lead, self.page_text_tokens, counter)]
            } else {
                // A chain of hops: project -> team -> ... -> answer.
                let hops: Vec<String> = (1..self.golds_per_question).map(|_| code_iter.next().expect("checked above")).collect();
                let mut golds = Vec::with_capacity(self.golds_per_question);
                let mut subject = format!("project {qid}");
                for hop in &hops {
                    let lead = format!("The team behind {subject} is called {hop}.");
                    golds.push(vocab.fill(&mut rng, &lead, self.page_text_tokens, counter));
                    subject = format!("team {hop}");
                }
                let lead = format!("The registry code kept by {subject} is {answer}.");
                golds.push(vocab.fill(&mut rng, &lead, self.page_text_tokens, counter));
                golds
            };
            let question = if self.golds_per_question <= 1 {
                format!("What registry code was assigned to project {qid}?")
            } else {
                format!("What registry code is kept by the team behind project {qid}?")
            };
            questions.push(PoolQuestion { qid, question, answer, golds });
        }

        let distracters = (0..self.distracters)
            .map(|i| Distracter {
                qid: None,
                text: vocab.fill(&mut rng, "", self.page_text_tokens, counter),
                rank: Some(i as u32 + 1),
            })
            .collect();
        Ok(PassagePool { questions, distracters })
    }
}
