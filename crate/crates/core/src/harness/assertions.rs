use crate::error::{Error, Result};

pub const START_SENTINEL: &str = "# ASSERTION_START";
pub const END_SENTINEL: &str = "# ASSERTION_END";

/// One sentinel-delimited block. `text` holds the exact bytes from the
/// start sentinel line through the end sentinel line, terminators included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssertionBlock {
    /// 1-based position among the script's blocks.
    pub index: usize,
    /// 1-based line numbers of the two sentinels in the original source.
    pub start_line: usize,
    pub end_line: usize,
    pub text: String,
    /// Number of stripped-source lines that precede the block.
    pub stripped_offset: usize,
}

impl AssertionBlock {
    pub fn body_lines(&self) -> impl Iterator<Item = &str> {
        let lines: Vec<&str> = self.text.lines().collect();
        let n = lines.len();
        lines.into_iter().skip(1).take(n.saturating_sub(2))
    }

    pub fn contains_line(&self, line: usize) -> bool {
        (self.start_line..=self.end_line).contains(&line)
    }
}

fn sentinel(line: &str) -> Option<bool> {
    match line.trim() {
        START_SENTINEL => Some(true),
        END_SENTINEL => Some(false),
        _ => None,
    }
}

/// Locate every block without modifying the source.
pub fn find_blocks(source: &str) -> Result<Vec<AssertionBlock>> {
    Ok(strip_assertions(source)?.1)
}

/// Remove every block, sentinels included. [`reinsert_blocks`] undoes this
/// byte for byte.
pub fn strip_assertions(source: &str) -> Result<(String, Vec<AssertionBlock>)> {
    let mut stripped = String::with_capacity(source.len());
    let mut stripped_lines = 0;
    let mut blocks = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, line) in source.split_inclusive('\n').enumerate() {
        let lineno = i + 1;
        match (sentinel(line), &mut open) {
            (Some(true), Some((start, _))) => {
                return Err(Error::Format(format!(
                    "line {lineno}: nested {START_SENTINEL} (block opened at line {start})"
                )))
            }
            (Some(true), None) => open = Some((lineno, line.to_owned())),
            (Some(false), None) => {
                return Err(Error::Format(format!(
                    "line {lineno}: {END_SENTINEL} without a matching {START_SENTINEL}"
                )))
            }
            (Some(false), Some(_)) => {
                let (start, mut text) = open.take().expect("open block");
                text.push_str(line);
                blocks.push(AssertionBlock {
                    index: blocks.len() + 1,
                    start_line: start,
                    end_line: lineno,
                    text,
                    stripped_offset: stripped_lines,
                });
            }
            (None, Some((_, text))) => text.push_str(line),
            (None, None) => {
                stripped.push_str(line);
                stripped_lines += 1;
            }
        }
    }
    if let Some((start, _)) = open {
        return Err(Error::Format(format!("line {start}: {START_SENTINEL} is never closed")));
    }
    Ok((stripped, blocks))
}

/// Put blocks back at their recorded positions.
pub fn reinsert_blocks(stripped: &str, blocks: &[AssertionBlock]) -> String {
    let mut out = String::with_capacity(stripped.len() + blocks.iter().map(|b| b.text.len()).sum::<usize>());
    let mut pending = blocks.iter().peekable();
    let mut lines = stripped.split_inclusive('\n').enumerate().peekable();
    loop {
        let at = lines.peek().map_or(usize::MAX, |(i, _)| *i);
        while let Some(b) = pending.next_if(|b| b.stripped_offset <= at) {
            out.push_str(&b.text);
        }
        match lines.next() {
            Some((_, line)) => out.push_str(line),
            None => break,
        }
    }
    out
}

/// The source with only block `index` (1-based) kept.
pub fn enable_single_block(source: &str, index: usize) -> Result<String> {
    let (stripped, blocks) = strip_assertions(source)?;
    let chosen: Vec<AssertionBlock> = blocks.into_iter().filter(|b| b.index == index).collect();
    if chosen.is_empty() {
        return Err(Error::Bounds(format!("no assertion block {index}")));
    }
    Ok(reinsert_blocks(&stripped, &chosen))
}
