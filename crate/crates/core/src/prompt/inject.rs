use crate::docmodel::{document_layout, parse_blocks, DocError, PaginatedDocument, TokenCounter, BLOCK_SEPARATOR};

use super::{PromptError, ReminderStrategy};

/// Where reminders go, as page indices: slot `i` puts a reminder right before
/// page `i`, slot `len` after the last page. Sorted; repeats mean stacked
/// reminders.
pub fn reminder_slots(
    doc: &PaginatedDocument,
    strategy: &ReminderStrategy,
    counter: &dyn TokenCounter,
) -> Result<Vec<usize>, PromptError> {
    strategy.validate()?;
    match strategy {
        ReminderStrategy::Uniform { r } | ReminderStrategy::TagsOnly { r } => {
            if doc.is_empty() {
                return Ok(Vec::new());
            }
            let layout = document_layout(counter, doc);
            let multiples = (layout.total_tokens.saturating_sub(1)) / r;
            Ok((1..=multiples).map(|j| layout.offsets.partition_point(|(_, at)| *at < j * r)).collect())
        }
        ReminderStrategy::AtBeginning { copies } => Ok(vec![0; *copies]),
        ReminderStrategy::BeforePages { pages } => {
            let mut slots = pages.iter().map(|id| doc.position(*id).ok_or(PromptError::UnknownPage(*id))).collect::<Result<Vec<_>, _>>()?;
            slots.sort_unstable();
            Ok(slots)
        }
        ReminderStrategy::None => Ok(Vec::new()),
    }
}

/// Renders `doc` with `reminder` blocks placed per `strategy`. Reminders are
/// separate blocks, joined to their neighbours by a blank line like pages.
pub fn inject_reminders(
    doc: &PaginatedDocument,
    strategy: &ReminderStrategy,
    reminder: &str,
    counter: &dyn TokenCounter,
) -> Result<String, PromptError> {
    let slots = reminder_slots(doc, strategy, counter)?;
    let mut blocks: Vec<String> = Vec::with_capacity(doc.len() + slots.len());
    let mut next = slots.iter().peekable();
    for (i, page) in doc.pages().iter().enumerate() {
        while next.next_if(|s| **s == i).is_some() {
            blocks.push(reminder.to_owned());
        }
        blocks.push(page.render());
    }
    blocks.extend(next.map(|_| reminder.to_owned()));
    Ok(blocks.join(BLOCK_SEPARATOR))
}

/// Removes every reminder block outside the pages along with one adjacent
/// separator, leaving page text untouched.
pub fn strip_reminders(text: &str) -> Result<String, DocError> {
    let spans = parse_blocks(text)?.reminders;
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for span in spans {
        let mut start = span.start;
        let mut end = span.end;
        if text[end..].starts_with(BLOCK_SEPARATOR) {
            end += BLOCK_SEPARATOR.len();
        } else if out.ends_with(BLOCK_SEPARATOR) && cursor == start {
            out.truncate(out.len() - BLOCK_SEPARATOR.len());
        } else if text[cursor..start].ends_with(BLOCK_SEPARATOR) {
            start -= BLOCK_SEPARATOR.len();
        }
        out.push_str(&text[cursor..start]);
        cursor = end;
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}
