use std::collections::BTreeSet;

use crate::docmodel::{document_layout, PaginatedDocument, TokenCounter};

/// Splits `doc` into consecutive whole-page chunks. Pages are added to the
/// current chunk until its rendered length reaches `c` tokens, then a new
/// chunk starts. Panics if `c` is 0.
pub fn chunk_split(doc: &PaginatedDocument, c: usize, counter: &dyn TokenCounter) -> Vec<PaginatedDocument> {
    assert!(c >= 1, "chunk size must be at least 1");
    let layout = document_layout(counter, doc);
    let mut chunks = Vec::new();
    let mut start = 0;
    for i in 0..doc.len() {
        let length = layout.offsets[i].1 - layout.offsets[start].1 + layout.block_tokens[i];
        if length >= c || i + 1 == doc.len() {
            let pages = doc.pages()[start..=i].to_vec();
            chunks.push(PaginatedDocument::new(pages).expect("sub-sequence of a valid document"));
            start = i + 1;
        }
    }
    chunks
}

/// Union of retrieved page lists in ascending id order.
pub fn aggregate_retrieved<'a, I>(lists: I) -> Vec<u32>
where
    I: IntoIterator<Item = &'a Vec<u32>>,
{
    let union: BTreeSet<u32> = lists.into_iter().flatten().copied().collect();
    union.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::Cl100kCounter;

    /// Counts one token per whitespace-separated word.
    struct Words;

    impl TokenCounter for Words {
        fn identity(&self) -> &str {
            "words"
        }
        fn count(&self, text: &str) -> usize {
            text.split_whitespace().count()
        }
    }

    /// Pages of exactly `tokens` words once rendered with tags. Each tag line
    /// is two words, so the text gets `tokens - 4`.
    fn pages(n: usize, tokens: usize) -> PaginatedDocument {
        PaginatedDocument::from_texts((0..n).map(|_| vec!["w"; tokens - 4].join(" "))).unwrap()
    }

    fn sizes(chunks: &[PaginatedDocument]) -> Vec<usize> {
        chunks.iter().map(|c| c.len()).collect()
    }

    #[test]
    fn large_chunk_keeps_document_whole() {
        let doc = pages(5, 100);
        let chunks = chunk_split(&doc, 10_000, &Words);
        assert_eq!(chunks, vec![doc]);
    }

    #[test]
    fn even_pages_pack_exactly() {
        assert_eq!(sizes(&chunk_split(&pages(8, 10_000), 20_000, &Words)), vec![2, 2, 2, 2]);
    }

    #[test]
    fn uneven_pages_overshoot_to_the_next_boundary() {
        assert_eq!(sizes(&chunk_split(&pages(6, 6_000), 10_000, &Words)), vec![2, 2, 2]);
    }

    #[test]
    fn oversize_page_stands_alone() {
        let counter = Cl100kCounter::shared();
        let doc = PaginatedDocument::from_texts(["short", &"long ".repeat(500), "short"]).unwrap();
        assert_eq!(sizes(&chunk_split(&doc, 100, counter.as_ref())), vec![2, 1]);
    }

    #[test]
    fn empty_document_has_no_chunks() {
        assert!(chunk_split(&PaginatedDocument::empty(), 10, &Words).is_empty());
    }

    #[test]
    fn aggregation_is_sorted_union() {
        assert_eq!(aggregate_retrieved(&[vec![3, 1], vec![7], vec![3]]), vec![1, 3, 7]);
        assert!(aggregate_retrieved(&[vec![], vec![]]).is_empty());
    }
}
