use std::collections::HashMap;

use rayon::prelude::*;

use super::{positioned_id, scattered_id, CorpusError, PassagePool, PoolQuestion, QASample, SweepSpec};
use crate::docmodel::{Page, PaginatedDocument, TokenCounter, BLOCK_SEPARATOR};

/// Token geometry of a question's distracter list rendered alone, pages
/// numbered from 1. Measured lazily up to a token budget.
#[derive(Debug, Clone)]
pub struct DistracterLayout {
    texts: Vec<String>,
    /// Start offset of each measured page.
    offsets: Vec<usize>,
    /// Rendered length of the prefix ending with each measured page.
    prefix_tokens: Vec<usize>,
    exhausted: bool,
}

impl DistracterLayout {
    /// Measures pages until the rendered prefix exceeds `budget` tokens or the
    /// distracters run out.
    pub fn measure(texts: &[&str], counter: &dyn TokenCounter, budget: usize) -> Result<Self, CorpusError> {
        let mut layout = Self { texts: Vec::new(), offsets: Vec::new(), prefix_tokens: Vec::new(), exhausted: true };
        let mut cursor = 0;
        for (i, text) in texts.iter().enumerate() {
            let mut block = Page::new(i as u32 + 1, *text)?.render();
            let alone = counter.count(&block);
            block.push_str(BLOCK_SEPARATOR);
            let joined = counter.count(&block);
            let prefix = cursor + alone;
            layout.texts.push((*text).to_owned());
            layout.offsets.push(cursor);
            layout.prefix_tokens.push(prefix);
            cursor += joined;
            if prefix > budget {
                layout.exhausted = false;
                return Ok(layout);
            }
        }
        Ok(layout)
    }

    pub fn measured(&self) -> usize {
        self.texts.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.prefix_tokens.last().copied().unwrap_or(0)
    }

    /// Number of leading distracters whose rendered length stays within
    /// `budget`, or an error when all of them together fall short of it.
    fn truncate(&self, qid: &str, budget: usize, needed: usize) -> Result<usize, CorpusError> {
        if self.exhausted && self.total_tokens() < budget {
            return Err(CorpusError::InsufficientDistracters {
                qid: qid.to_owned(),
                needed,
                available: self.total_tokens(),
            });
        }
        Ok(self.prefix_tokens.partition_point(|&len| len <= budget))
    }

    /// Places a single gold passage at answer position `x` in a document of
    /// about `d` tokens.
    pub fn positioned(&self, question: &PoolQuestion, x: usize, d: usize) -> Result<QASample, CorpusError> {
        let gold = single_gold(question)?;
        if x > d {
            return Err(CorpusError::PositionOutOfRange { x, d });
        }
        let n = self.truncate(&question.qid, d, d)?;
        // The gold's offset is the offset of the distracter it displaces, since
        // every page before it keeps its id.
        let at = self.offsets[..n].partition_point(|&offset| offset < x);
        let mut texts: Vec<&str> = self.texts[..n].iter().map(String::as_str).collect();
        texts.insert(at, gold);
        let document = PaginatedDocument::from_texts(texts)?;
        Ok(QASample {
            id: positioned_id(&question.qid, d, x),
            qid: question.qid.clone(),
            question: question.question.clone(),
            answer: question.answer.clone(),
            gold_pages: vec![at as u32 + 1],
            x: Some(x),
            d,
            document,
        })
    }
}

fn single_gold(question: &PoolQuestion) -> Result<&str, CorpusError> {
    match question.golds.as_slice() {
        [gold] => Ok(gold),
        golds => Err(CorpusError::GoldCount {
            qid: question.qid.clone(),
            golds: golds.len(),
            expected: "positioned construction needs exactly one",
        }),
    }
}

fn lookup<'a>(pool: &'a PassagePool, qid: &str) -> Result<&'a PoolQuestion, CorpusError> {
    pool.question(qid).ok_or_else(|| CorpusError::UnknownQuestion(qid.to_owned()))
}

/// Builds one sample with the gold passage about `x` tokens into a document of
/// about `d` tokens.
pub fn build_positioned_document(
    pool: &PassagePool,
    qid: &str,
    x: usize,
    d: usize,
    counter: &dyn TokenCounter,
) -> Result<QASample, CorpusError> {
    let question = lookup(pool, qid)?;
    single_gold(question)?;
    let layout = DistracterLayout::measure(&pool.distracters_for(qid), counter, d)?;
    layout.positioned(question, x, d)
}

/// Target offsets for `golds` passages spread evenly over `d` tokens:
/// `round(i * d / (golds + 1))` for i in 1..=golds.
pub fn scatter_targets(golds: usize, d: usize) -> Vec<usize> {
    let parts = golds + 1;
    (1..=golds).map(|i| (2 * i * d + parts) / (2 * parts)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    Distracter(usize),
    Gold(usize),
}

/// Builds one sample with every gold passage of a multi-gold question placed
/// at regularly spaced offsets.
pub fn build_scattered_document(
    pool: &PassagePool,
    qid: &str,
    d: usize,
    counter: &dyn TokenCounter,
) -> Result<QASample, CorpusError> {
    let question = lookup(pool, qid)?;
    let g = question.golds.len();
    if g < 2 {
        return Err(CorpusError::GoldCount {
            qid: qid.to_owned(),
            golds: g,
            expected: "scattered construction needs at least two",
        });
    }

    let block_tokens = |id: u32, text: &str| -> Result<usize, CorpusError> {
        let block = Page::new(id, text)?.render() + BLOCK_SEPARATOR;
        Ok(counter.count(&block))
    };

    // All golds but one count against the budget, so the finished document
    // overshoots d by at most one page, as with a single gold.
    let mut reserved = 0;
    for gold in &question.golds[1..] {
        reserved += block_tokens(1, gold)?;
    }
    let budget = d.saturating_sub(reserved);
    let layout = DistracterLayout::measure(&pool.distracters_for(qid), counter, budget)?;
    let n = layout.truncate(qid, budget, d)?;

    let text_of = |slot: Slot| match slot {
        Slot::Distracter(i) => layout.texts[i].as_str(),
        Slot::Gold(i) => question.golds[i].as_str(),
    };
    let mut memo: HashMap<(u32, Slot), usize> = HashMap::new();
    let mut slots: Vec<Slot> = (0..n).map(Slot::Distracter).collect();

    for (i, target) in scatter_targets(g, d).into_iter().enumerate() {
        let mut offset = 0;
        let mut at = slots.len();
        for (pos, slot) in slots.iter().enumerate() {
            if offset >= target {
                at = pos;
                break;
            }
            let id = pos as u32 + 1;
            let tokens = match memo.get(&(id, *slot)) {
                Some(t) => *t,
                None => {
                    let t = block_tokens(id, text_of(*slot))?;
                    memo.insert((id, *slot), t);
                    t
                }
            };
            offset += tokens;
        }
        slots.insert(at, Slot::Gold(i));
    }

    let gold_pages = slots
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, Slot::Gold(_)))
        .map(|(pos, _)| pos as u32 + 1)
        .collect();
    let document = PaginatedDocument::from_texts(slots.iter().map(|s| text_of(*s)))?;
    Ok(QASample {
        id: scattered_id(qid, d),
        qid: qid.to_owned(),
        question: question.question.clone(),
        answer: question.answer.clone(),
        gold_pages,
        x: None,
        d,
        document,
    })
}

/// One positioned sample per question and answer position, question-major.
pub fn sweep_samples(pool: &PassagePool, spec: &SweepSpec, counter: &dyn TokenCounter) -> Result<Vec<QASample>, CorpusError> {
    let questions: Vec<&PoolQuestion> = pool.questions.iter().filter(|q| q.golds.len() == 1).take(spec.questions).collect();
    if questions.len() < spec.questions {
        return Err(CorpusError::NotEnoughQuestions { requested: spec.questions, available: questions.len() });
    }
    let per_question: Vec<Vec<QASample>> = questions
        .par_iter()
        .map(|q| {
            let layout = DistracterLayout::measure(&pool.distracters_for(&q.qid), counter, spec.d)?;
            spec.positions().map(|x| layout.positioned(q, x, spec.d)).collect()
        })
        .collect::<Result<_, CorpusError>>()?;
    Ok(per_question.into_iter().flatten().collect())
}

/// One scattered sample per multi-gold question, for the first `count`.
pub fn scatter_samples(
    pool: &PassagePool,
    d: usize,
    count: usize,
    counter: &dyn TokenCounter,
) -> Result<Vec<QASample>, CorpusError> {
    let qids: Vec<&str> = pool.questions.iter().filter(|q| q.golds.len() >= 2).take(count).map(|q| q.qid.as_str()).collect();
    if qids.len() < count {
        return Err(CorpusError::NotEnoughQuestions { requested: count, available: qids.len() });
    }
    qids.par_iter().map(|qid| build_scattered_document(pool, qid, d, counter)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixture::{FixtureSpec, Vocabulary};
    use crate::corpus::Distracter;
    use crate::docmodel::{document_layout, Cl100kCounter};

    fn pool(golds: usize, page_text_tokens: usize, distracters: usize) -> PassagePool {
        let counter = Cl100kCounter::shared();
        FixtureSpec { questions: 1, golds_per_question: golds, page_text_tokens, distracters, seed: 11 }
            .generate(counter.as_ref())
            .unwrap()
    }

    fn gold_offsets(sample: &QASample) -> Vec<usize> {
        let counter = Cl100kCounter::shared();
        let layout = document_layout(counter.as_ref(), &sample.document);
        sample.gold_pages.iter().map(|g| layout.offsets.iter().find(|(id, _)| id == g).unwrap().1).collect()
    }

    #[test]
    fn zero_position_puts_gold_first_and_full_position_last() {
        let counter = Cl100kCounter::shared();
        let p = pool(1, 188, 200);
        let first = build_positioned_document(&p, "q1", 0, 20_000, counter.as_ref()).unwrap();
        assert_eq!(first.gold_pages, vec![1]);
        let last = build_positioned_document(&p, "q1", 20_000, 20_000, counter.as_ref()).unwrap();
        assert_eq!(last.gold_pages, vec![last.document.len() as u32]);
    }

    #[test]
    fn mid_position_lands_within_one_page() {
        let counter = Cl100kCounter::shared();
        // 188 text tokens render to 199-token blocks.
        let p = pool(1, 188, 200);
        let s = build_positioned_document(&p, "q1", 10_000, 20_000, counter.as_ref()).unwrap();
        let offset = gold_offsets(&s)[0];
        assert!((10_000..=10_200).contains(&offset), "{offset}");

        let layout = document_layout(counter.as_ref(), &s.document);
        let total = layout.total_tokens;
        assert!(total.abs_diff(20_000) <= layout.max_block_tokens(), "{total}");
    }

    #[test]
    fn distracter_order_is_preserved() {
        let counter = Cl100kCounter::shared();
        let p = pool(1, 60, 300);
        let s = build_positioned_document(&p, "q1", 3_000, 8_000, counter.as_ref()).unwrap();
        let expected = p.distracters_for("q1");
        let got: Vec<&str> = s.document.pages().iter().filter(|pg| pg.id() != s.gold_pages[0]).map(|pg| pg.text()).collect();
        assert_eq!(got, expected[..got.len()].to_vec());
    }

    #[test]
    fn insufficient_distracters_is_an_error() {
        let counter = Cl100kCounter::shared();
        let p = pool(1, 188, 10);
        assert!(matches!(
            build_positioned_document(&p, "q1", 0, 20_000, counter.as_ref()),
            Err(CorpusError::InsufficientDistracters { .. })
        ));
    }

    #[test]
    fn positions_beyond_length_are_rejected() {
        let counter = Cl100kCounter::shared();
        let p = pool(1, 60, 100);
        assert!(matches!(
            build_positioned_document(&p, "q1", 5_001, 5_000, counter.as_ref()),
            Err(CorpusError::PositionOutOfRange { .. })
        ));
    }

    #[test]
    fn scatter_targets_are_evenly_spaced() {
        assert_eq!(scatter_targets(2, 30_000), vec![10_000, 20_000]);
        assert_eq!(scatter_targets(3, 40_000), vec![10_000, 20_000, 30_000]);
        assert_eq!(scatter_targets(2, 10), vec![3, 7]);
    }

    #[test]
    fn scattered_golds_land_near_targets() {
        let counter = Cl100kCounter::shared();
        let p = pool(3, 188, 260);
        let s = build_scattered_document(&p, "q1", 40_000, counter.as_ref()).unwrap();
        assert_eq!(s.gold_count(), 3);
        assert!(s.x.is_none());
        let max_page = document_layout(counter.as_ref(), &s.document).max_block_tokens();
        for (offset, target) in gold_offsets(&s).into_iter().zip([10_000, 20_000, 30_000]) {
            assert!(offset >= target && offset - target <= max_page, "{offset} vs {target}");
        }
        let total = document_layout(counter.as_ref(), &s.document).total_tokens;
        assert!(total.abs_diff(40_000) <= max_page, "{total}");
    }

    #[test]
    fn scattered_requires_multiple_golds() {
        let counter = Cl100kCounter::shared();
        let p = pool(1, 60, 100);
        assert!(matches!(
            build_scattered_document(&p, "q1", 2_000, counter.as_ref()),
            Err(CorpusError::GoldCount { .. })
        ));
    }

    #[test]
    fn sweep_produces_one_sample_per_position() {
        let counter = Cl100kCounter::shared();
        let p = pool(1, 188, 200);
        let spec = SweepSpec::new(20_000, 10_000, 1).unwrap();
        let samples = sweep_samples(&p, &spec, counter.as_ref()).unwrap();
        assert_eq!(samples.iter().map(|s| s.x.unwrap()).collect::<Vec<_>>(), vec![0, 10_000, 20_000]);
        assert!(sweep_samples(&p, &SweepSpec::new(20_000, 10_000, 2).unwrap(), counter.as_ref()).is_err());
    }

    #[test]
    fn hand_built_pool() {
        let counter = Cl100kCounter::shared();
        let vocab = Vocabulary::new(counter.as_ref());
        let pool = PassagePool {
            questions: vec![PoolQuestion {
                qid: "a".into(),
                question: "Q?".into(),
                answer: "A".into(),
                golds: vec!["gold text".into()],
            }],
            distracters: (0..50).map(|i| Distracter { qid: None, text: vocab.words(i, 20), rank: None }).collect(),
        };
        let s = build_positioned_document(&pool, "a", 0, 300, counter.as_ref()).unwrap();
        assert_eq!(s.document.pages()[0].text(), "gold text");
    }
}
