//! SubRip (`.srt`) caption extraction.

use crate::error::{Error, Result};

/// Returns the caption text of an SRT file, lines joined by single spaces.
///
/// Index and timestamp lines are dropped. A leading byte-order mark, CRLF line
/// endings and a missing trailing blank line are all accepted.
pub fn parse_srt(raw: &str) -> Result<String> {
    let raw = raw.strip_prefix('\u{feff}').unwrap_or(raw);
    let mut captions: Vec<&str> = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();

    for (i, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            flush_block(&block, &mut captions)?;
            block.clear();
        } else {
            block.push((i + 1, line));
        }
    }
    flush_block(&block, &mut captions)?;
    Ok(captions.join(" "))
}

fn flush_block<'a>(block: &[(usize, &'a str)], captions: &mut Vec<&'a str>) -> Result<()> {
    let Some(&(start, _)) = block.first() else {
        return Ok(());
    };
    match block.get(1) {
        Some((_, ts)) if is_timestamp_line(ts) => {
            captions.extend(block[2..].iter().map(|&(_, text)| text));
            Ok(())
        }
        other => Err(Error::MalformedSrt {
            line: start,
            found: other.map(|(_, s)| s.to_string()).unwrap_or_default(),
        }),
    }
}

/// `HH:MM:SS,mmm --> HH:MM:SS,mmm`, optionally followed by position hints.
pub(crate) fn is_timestamp_line(line: &str) -> bool {
    let Some((start, end)) = line.split_once("-->") else {
        return false;
    };
    let end = end.trim_start();
    let end = end.split_whitespace().next().unwrap_or("");
    is_timestamp(start.trim()) && is_timestamp(end)
}

fn is_timestamp(s: &str) -> bool {
    let Some((hms, millis)) = s.split_once([',', '.']) else {
        return false;
    };
    let parts: Vec<&str> = hms.split(':').collect();
    let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    parts.len() == 3
        && digits(parts[0])
        && parts[1..].iter().all(|p| p.len() == 2 && digits(p))
        && millis.len() == 3
        && digits(millis)
}
