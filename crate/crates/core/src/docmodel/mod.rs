//! Paginated documents.
//!
//! A document is an ordered list of pages, each rendered as
//!
//! ```text
//! <PAGE {id}>
//! {text}
//! </PAGE {id}>
//! ```
//!
//! with one blank line between consecutive blocks. Pages are the unit every
//! method works with: answers are placed on page boundaries, reminders are
//! injected between pages, retrieval returns page ids and chunking never
//! splits a page.

mod tokens;

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tokens::{count_tokens, Cl100kCounter, SharedCounter, TokenCounter};

pub const PAGE_OPEN: &str = "<PAGE";
pub const PAGE_CLOSE: &str = "</PAGE";
pub const REMINDER_OPEN: &str = "<INSTRUCTIONS_REMINDER>";
pub const REMINDER_CLOSE: &str = "</INSTRUCTIONS_REMINDER>";

/// Separator placed between rendered blocks.
pub const BLOCK_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error)]
pub enum DocError {
    #[error("invalid page {id}: {reason}")]
    InvalidPage { id: u32, reason: &'static str },
    #[error("duplicate page id {0}")]
    DuplicatePageId(u32),
    #[error("malformed page tag at byte {offset}: {reason}")]
    MalformedTag { offset: usize, reason: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One tagged unit of a document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPage")]
pub struct Page {
    id: u32,
    text: String,
}

#[derive(Deserialize)]
struct RawPage {
    id: u32,
    text: String,
}

impl TryFrom<RawPage> for Page {
    type Error = DocError;

    fn try_from(raw: RawPage) -> Result<Self, Self::Error> {
        Page::new(raw.id, raw.text)
    }
}

impl Page {
    /// Creates a page. Ids start at 1; the text must be non-empty and must not
    /// contain page tags (they would break parsing, and escaping them would
    /// change token counts).
    pub fn new(id: u32, text: impl Into<String>) -> Result<Self, DocError> {
        let text = text.into();
        if id == 0 {
            return Err(DocError::InvalidPage { id, reason: "page ids start at 1" });
        }
        if text.is_empty() {
            return Err(DocError::InvalidPage { id, reason: "empty text" });
        }
        if text.contains(PAGE_OPEN) || text.contains(PAGE_CLOSE) {
            return Err(DocError::InvalidPage { id, reason: "text contains a page tag" });
        }
        Ok(Self { id, text })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// The tagged block for this page, without separators.
    pub fn render(&self) -> String {
        format!("<PAGE {id}>\n{text}\n</PAGE {id}>", id = self.id, text = self.text)
    }

    /// Same page under a different id.
    pub fn with_id(&self, id: u32) -> Result<Self, DocError> {
        Page::new(id, self.text.clone())
    }
}

/// Ordered pages with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Page>", into = "Vec<Page>")]
pub struct PaginatedDocument {
    pages: Vec<Page>,
}

impl TryFrom<Vec<Page>> for PaginatedDocument {
    type Error = DocError;

    fn try_from(pages: Vec<Page>) -> Result<Self, Self::Error> {
        PaginatedDocument::new(pages)
    }
}

impl From<PaginatedDocument> for Vec<Page> {
    fn from(doc: PaginatedDocument) -> Self {
        doc.pages
    }
}

impl PaginatedDocument {
    pub fn new(pages: Vec<Page>) -> Result<Self, DocError> {
        let mut seen = HashSet::with_capacity(pages.len());
        for page in &pages {
            if !seen.insert(page.id) {
                return Err(DocError::DuplicatePageId(page.id));
            }
        }
        Ok(Self { pages })
    }

    /// Builds a document from texts, numbering pages 1..=n.
    pub fn from_texts<I, S>(texts: I) -> Result<Self, DocError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let pages = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Page::new(i as u32 + 1, t))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(pages)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn pages(&self) -> &[Page] {
        &self.pages
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.pages.iter().map(Page::id)
    }

    pub fn get(&self, id: u32) -> Option<&Page> {
        self.pages.iter().find(|p| p.id == id)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.get(id).is_some()
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.pages.iter().position(|p| p.id == id)
    }
}

/// Renders every page as a tagged block, blocks separated by a blank line.
pub fn render_document(doc: &PaginatedDocument) -> String {
    let mut out = String::new();
    for (i, page) in doc.pages.iter().enumerate() {
        if i > 0 {
            out.push_str(BLOCK_SEPARATOR);
        }
        out.push_str(&page.render());
    }
    out
}

/// A page recovered by the parser with the byte span of its tagged block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPage {
    pub page: Page,
    pub span: Range<usize>,
}

/// Parses tagged text back into a document. Text between blocks is ignored
/// and `INSTRUCTIONS_REMINDER` blocks are skipped whole.
pub fn parse_document(text: &str) -> Result<PaginatedDocument, DocError> {
    let pages = parse_pages(text)?.into_iter().map(|p| p.page).collect();
    PaginatedDocument::new(pages)
}

/// Like [`parse_document`] but keeps the byte span of each page block.
pub fn parse_pages(text: &str) -> Result<Vec<ParsedPage>, DocError> {
    parse_blocks(text).map(|b| b.pages)
}

/// Page blocks and skipped reminder blocks found in a text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedBlocks {
    pub pages: Vec<ParsedPage>,
    /// Byte span of each `INSTRUCTIONS_REMINDER` block outside the pages.
    pub reminders: Vec<Range<usize>>,
}

/// Scans tagged text for page blocks and reminder blocks.
pub fn parse_blocks(text: &str) -> Result<ParsedBlocks, DocError> {
    let mut pages = Vec::new();
    let mut reminders = Vec::new();
    let mut seen = HashSet::new();
    let mut cursor = 0;

    while cursor < text.len() {
        let rest = &text[cursor..];
        let next = [PAGE_OPEN, PAGE_CLOSE, REMINDER_OPEN]
            .iter()
            .filter_map(|tag| rest.find(tag).map(|at| (at, *tag)))
            .min_by_key(|(at, _)| *at);
        let Some((at, tag)) = next else { break };
        let start = cursor + at;

        match tag {
            REMINDER_OPEN => {
                let body = start + REMINDER_OPEN.len();
                let close = text[body..].find(REMINDER_CLOSE).ok_or_else(|| malformed(start, "unterminated reminder block"))?;
                cursor = body + close + REMINDER_CLOSE.len();
                reminders.push(start..cursor);
            }
            PAGE_CLOSE => return Err(malformed(start, "closing tag without an opening tag")),
            _ => {
                let (page, end) = parse_block(text, start)?;
                if !seen.insert(page.id) {
                    return Err(DocError::DuplicatePageId(page.id));
                }
                pages.push(ParsedPage { page, span: start..end });
                cursor = end;
            }
        }
    }
    Ok(ParsedBlocks { pages, reminders })
}

fn malformed(offset: usize, reason: impl Into<String>) -> DocError {
    DocError::MalformedTag { offset, reason: reason.into() }
}

/// Reads `<PAGE {id}>` at `offset`, returning the id and the index after `>`.
fn read_tag(text: &str, offset: usize, prefix: &str) -> Result<(u32, usize), DocError> {
    let after = offset + prefix.len();
    let rest = &text[after..];
    let rest = rest.strip_prefix(' ').ok_or_else(|| malformed(offset, "expected a space after the tag name"))?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return Err(malformed(offset, "missing page number"));
    }
    if rest.as_bytes().get(digits) != Some(&b'>') {
        return Err(malformed(offset, "expected '>' after the page number"));
    }
    let id = rest[..digits].parse::<u32>().map_err(|_| malformed(offset, "page number out of range"))?;
    Ok((id, after + 1 + digits + 1))
}

fn parse_block(text: &str, start: usize) -> Result<(Page, usize), DocError> {
    let (id, open_end) = read_tag(text, start, PAGE_OPEN)?;
    if text.as_bytes().get(open_end) != Some(&b'\n') {
        return Err(malformed(start, "expected a newline after the opening tag"));
    }
    let body = open_end + 1;
    let close_rel = text[body..].find(PAGE_CLOSE).ok_or_else(|| malformed(start, format!("page {id} is not terminated")))?;
    let close = body + close_rel;
    if text[body..close].contains(PAGE_OPEN) {
        return Err(malformed(start, format!("page {id} contains a nested page")));
    }
    if close == body || text.as_bytes()[close - 1] != b'\n' {
        return Err(malformed(close, "expected a newline before the closing tag"));
    }
    let (close_id, end) = read_tag(text, close, PAGE_CLOSE)?;
    if close_id != id {
        return Err(malformed(close, format!("page {id} closed as page {close_id}")));
    }
    let page = Page::new(id, &text[body..close - 1]).map_err(|e| malformed(start, e.to_string()))?;
    Ok((page, end))
}

/// Token geometry of a rendered document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentLayout {
    /// Page id and start offset of each page, in document order.
    pub offsets: Vec<(u32, usize)>,
    /// Tokens in each page's tagged block, separators excluded.
    pub block_tokens: Vec<usize>,
    /// Tokens in the whole rendered document.
    pub total_tokens: usize,
}

impl DocumentLayout {
    pub fn max_block_tokens(&self) -> usize {
        self.block_tokens.iter().copied().max().unwrap_or(0)
    }
}

/// Computes page offsets by summing per-block counts. Blocks are joined at a
/// fixed `>\n\n<PAGE` seam, so for a tokenizer whose pre-tokenization splits
/// there (cl100k does) the sums equal the count of the rendered prefix.
pub fn document_layout(counter: &dyn TokenCounter, doc: &PaginatedDocument) -> DocumentLayout {
    let mut offsets = Vec::with_capacity(doc.len());
    let mut block_tokens = Vec::with_capacity(doc.len());
    let mut cursor = 0;
    let mut total = 0;
    for page in doc.pages() {
        let mut block = page.render();
        let alone = counter.count(&block);
        block.push_str(BLOCK_SEPARATOR);
        let joined = counter.count(&block);
        offsets.push((page.id(), cursor));
        block_tokens.push(alone);
        total = cursor + alone;
        cursor += joined;
    }
    DocumentLayout { offsets, block_tokens, total_tokens: total }
}

/// Start offset of every page: the token count of the rendered text strictly
/// before its opening tag.
pub fn page_token_offsets(counter: &dyn TokenCounter, doc: &PaginatedDocument) -> Vec<(u32, usize)> {
    document_layout(counter, doc).offsets
}

/// Result of dropping pages from a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abbreviation {
    pub document: PaginatedDocument,
    /// Requested ids that do not exist in the source document.
    pub unknown: BTreeSet<u32>,
}

/// Keeps the pages whose ids are in `keep`, in original order.
pub fn abbreviate<I>(doc: &PaginatedDocument, keep: I) -> Abbreviation
where
    I: IntoIterator<Item = u32>,
{
    let keep: BTreeSet<u32> = keep.into_iter().collect();
    let pages = doc.pages.iter().filter(|p| keep.contains(&p.id)).cloned().collect();
    let unknown = keep.iter().copied().filter(|id| !doc.contains(*id)).collect();
    Abbreviation { document: PaginatedDocument { pages }, unknown }
}

/// Writes one `{"id", "text"}` object per line.
pub fn write_document_jsonl<W: Write>(doc: &PaginatedDocument, mut out: W) -> Result<(), DocError> {
    for page in doc.pages() {
        serde_json::to_writer(&mut out, page).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_document_jsonl<R: BufRead>(input: R) -> Result<PaginatedDocument, DocError> {
    let mut pages = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let page: Page = serde_json::from_str(&line).map_err(|e| DocError::Schema { line: i + 1, message: e.to_string() })?;
        pages.push(page);
    }
    PaginatedDocument::new(pages)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(pages: &[(u32, &str)]) -> PaginatedDocument {
        PaginatedDocument::new(pages.iter().map(|(id, t)| Page::new(*id, *t).unwrap()).collect()).unwrap()
    }

    #[test]
    fn renders_single_and_multiple_pages() {
        assert_eq!(render_document(&doc(&[(1, "foo")])), "<PAGE 1>\nfoo\n</PAGE 1>");
        assert_eq!(
            render_document(&doc(&[(1, "foo"), (2, "bar")])),
            "<PAGE 1>\nfoo\n</PAGE 1>\n\n<PAGE 2>\nbar\n</PAGE 2>"
        );
        assert_eq!(render_document(&PaginatedDocument::empty()), "");
    }

    #[test]
    fn rejects_bad_pages() {
        assert!(Page::new(0, "x").is_err());
        assert!(Page::new(1, "").is_err());
        assert!(Page::new(1, "a <PAGE 2> b").is_err());
        assert!(Page::new(1, "a </PAGE 2> b").is_err());
        assert!(matches!(
            PaginatedDocument::new(vec![Page::new(1, "a").unwrap(), Page::new(1, "b").unwrap()]),
            Err(DocError::DuplicatePageId(1))
        ));
    }

    #[test]
    fn parse_round_trips_and_skips_reminders() {
        let d = doc(&[(1, "foo"), (2, "bar")]);
        assert_eq!(parse_document(&render_document(&d)).unwrap(), d);

        let text = "<INSTRUCTIONS_REMINDER>\nRemember the <PAGE 9> thing\n</INSTRUCTIONS_REMINDER>\n\n<PAGE 3>\nx\n</PAGE 3>\n\n<INSTRUCTIONS_REMINDER>\nagain</INSTRUCTIONS_REMINDER>";
        assert_eq!(parse_document(text).unwrap(), doc(&[(3, "x")]));
    }

    #[test]
    fn parse_rejects_malformed_tags() {
        for bad in [
            "<PAGE 1>\nx\n</PAGE 2>",
            "<PAGE 1>\nx\n",
            "<PAGE 1>\nx <PAGE 2>\ny\n</PAGE 2>\n</PAGE 1>",
            "</PAGE 1>",
            "<PAGE one>\nx\n</PAGE one>",
            "<PAGE 1>x\n</PAGE 1>",
            "<INSTRUCTIONS_REMINDER> never closed",
        ] {
            assert!(matches!(parse_document(bad), Err(DocError::MalformedTag { .. })), "{bad:?}");
        }
        assert!(matches!(
            parse_document("<PAGE 1>\nx\n</PAGE 1>\n\n<PAGE 1>\ny\n</PAGE 1>"),
            Err(DocError::DuplicatePageId(1))
        ));
    }

    #[test]
    fn parse_keeps_spans() {
        let text = "intro\n<PAGE 4>\nabc\n</PAGE 4>tail";
        let pages = parse_pages(text).unwrap();
        assert_eq!(pages.len(), 1);
        assert_eq!(&text[pages[0].span.clone()], "<PAGE 4>\nabc\n</PAGE 4>");
    }

    #[test]
    fn offsets_match_prefix_counts() {
        let counter = Cl100kCounter::shared();
        assert!(page_token_offsets(counter.as_ref(), &PaginatedDocument::empty()).is_empty());
        assert_eq!(page_token_offsets(counter.as_ref(), &doc(&[(7, "solo")])), vec![(7, 0)]);

        let d = doc(&[(1, "same text here."), (2, "same text here."), (3, "and, finally: (this)")]);
        let rendered = render_document(&d);
        let layout = document_layout(counter.as_ref(), &d);
        for (id, offset) in &layout.offsets {
            let at = rendered.find(&format!("<PAGE {id}>")).unwrap();
            assert_eq!(*offset, counter.count(&rendered[..at]), "page {id}");
        }
        assert_eq!(layout.total_tokens, counter.count(&rendered));
        // "<PAGE 1>\nsame text here.\n</PAGE 1>\n\n" is 14 tokens under cl100k.
        assert_eq!(layout.offsets[1].1, 14);
    }

    #[test]
    fn abbreviate_keeps_document_order_and_reports_unknown() {
        let d = PaginatedDocument::from_texts(["a", "b", "c", "d", "e"]).unwrap();
        let ab = abbreviate(&d, [4, 2]);
        assert_eq!(ab.document.ids().collect::<Vec<_>>(), vec![2, 4]);
        assert!(ab.unknown.is_empty());

        assert!(abbreviate(&d, []).document.is_empty());

        let ab = abbreviate(&d, [2, 99]);
        assert_eq!(ab.document.ids().collect::<Vec<_>>(), vec![2]);
        assert_eq!(ab.unknown.into_iter().collect::<Vec<_>>(), vec![99]);
    }

    #[test]
    fn jsonl_round_trip_and_schema_errors() {
        let d = doc(&[(1, "foo"), (5, "bar \"quoted\"")]);
        let mut buf = Vec::new();
        write_document_jsonl(&d, &mut buf).unwrap();
        assert_eq!(read_document_jsonl(buf.as_slice()).unwrap(), d);

        let bad = b"{\"id\": 1, \"text\": \"ok\"}\n{\"id\": 0, \"text\": \"zero\"}\n";
        assert!(matches!(read_document_jsonl(&bad[..]), Err(DocError::Schema { line: 2, .. })));
    }
}
