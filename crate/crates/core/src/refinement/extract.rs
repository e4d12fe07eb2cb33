//! Code extraction from provider responses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedProgram {
    pub source: String,
    /// Which fenced block was taken, e.g. `block 2 of 2 (python)`.
    pub extraction_note: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("response contains no fenced code block")]
    CodeExtractionFailed,
    #[error("the last fenced code block is empty")]
    EmptyBlock,
}

/// Returns the contents of the last closed fenced block, without the fence
/// or its language tag.
pub fn extract_code(response: &str) -> Result<RefinedProgram, ExtractError> {
    let mut blocks: Vec<(String, Vec<&str>)> = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in response.lines() {
        let trimmed = line.trim();
        match open.take() {
            None => {
                if let Some(tag) = trimmed.strip_prefix("```") {
                    open = Some((tag.trim().to_string(), Vec::new()));
                }
            }
            Some((tag, body)) if trimmed == "```" => blocks.push((tag, body)),
            Some((tag, mut body)) => {
                body.push(line);
                open = Some((tag, body));
            }
        }
    }
    let total = blocks.len();
    let (tag, body) = blocks.pop().ok_or(ExtractError::CodeExtractionFailed)?;
    let mut source = body.join("\n");
    if source.trim().is_empty() {
        return Err(ExtractError::EmptyBlock);
    }
    source.push('\n');
    let label = if tag.is_empty() { "untagged".to_string() } else { tag };
    Ok(RefinedProgram { source, extraction_note: format!("block {total} of {total} ({label})") })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block() {
        let r = extract_code("Here:\n```python\ndef f():\n    return 1\n```\nDone.").unwrap();
        assert_eq!(r.source, "def f():\n    return 1\n");
        assert_eq!(r.extraction_note, "block 1 of 1 (python)");
    }

    #[test]
    fn last_block_wins() {
        let text = "Draft:\n```python\ndef f():\n    return 0\n```\nFinal:\n```py\ndef f():\n    return 1\n```\n";
        let r = extract_code(text).unwrap();
        assert_eq!(r.source, "def f():\n    return 1\n");
        assert_eq!(r.extraction_note, "block 2 of 2 (py)");
    }

    #[test]
    fn unclosed_trailing_fence_is_ignored() {
        let text = "```\nx = 1\n```\n```python\nunfinished";
        assert_eq!(extract_code(text).unwrap().source, "x = 1\n");
    }

    #[test]
    fn errors() {
        assert_eq!(extract_code("def f(): pass"), Err(ExtractError::CodeExtractionFailed));
        assert_eq!(extract_code("```python\n\n```"), Err(ExtractError::EmptyBlock));
    }
}
