//! Locating model-quoted spans inside the source text.
//!
//! Matching ignores case and treats any whitespace run as one space. Found
//! spans are reported as byte ranges of the original text.

/// Text folded for matching, with each folded char's original byte range.
struct Folded {
    chars: Vec<char>,
    starts: Vec<usize>,
    ends: Vec<usize>,
}

fn fold(text: &str) -> Folded {
    let mut out = Folded {
        chars: Vec::new(),
        starts: Vec::new(),
        ends: Vec::new(),
    };
    let mut pending_space: Option<usize> = None;
    for (pos, c) in text.char_indices() {
        if c.is_whitespace() {
            if !out.chars.is_empty() && pending_space.is_none() {
                pending_space = Some(pos);
            }
            continue;
        }
        if let Some(sp) = pending_space.take() {
            out.chars.push(' ');
            out.starts.push(sp);
            out.ends.push(sp + 1);
        }
        for lc in c.to_lowercase() {
            out.chars.push(lc);
            out.starts.push(pos);
            out.ends.push(pos + c.len_utf8());
        }
    }
    out
}

fn find_from(hay: &[char], needle: &[char], from: usize) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&i| hay[i..i + needle.len()] == *needle)
}

/// Finds `piece` in `text` at or after byte offset `from`.
pub fn locate(text: &str, piece: &str, from: usize) -> Option<(usize, usize)> {
    let hay = fold(text);
    let needle = fold(piece).chars;
    let start_char = hay.starts.iter().position(|&s| s >= from).unwrap_or(hay.chars.len());
    let i = find_from(&hay.chars, &needle, start_char)?;
    Some((hay.starts[i], hay.ends[i + needle.len() - 1]))
}

/// Locates every piece in order; each search starts where the previous
/// match began, so pieces may not go backwards.
pub fn locate_in_order(text: &str, pieces: &[String]) -> Result<Vec<(usize, usize)>, String> {
    let mut cursor = 0;
    let mut out = Vec::with_capacity(pieces.len());
    for piece in pieces {
        match locate(text, piece, cursor) {
            Some(span) => {
                cursor = span.0;
                out.push(span);
            }
            None => return Err(mismatch(text, piece)),
        }
    }
    Ok(out)
}

/// Describes how `piece` deviates from the most similar stretch of `text`,
/// word by word.
pub fn mismatch(text: &str, piece: &str) -> String {
    let hay: Vec<&str> = text.split_whitespace().collect();
    let want: Vec<&str> = piece.split_whitespace().collect();
    if want.is_empty() {
        return "empty span".to_string();
    }
    let width = want.len();
    let score = |start: usize| {
        want.iter()
            .enumerate()
            .filter(|(k, w)| hay.get(start + k).is_some_and(|h| h.eq_ignore_ascii_case(w)))
            .count()
    };
    let best = (0..hay.len().max(1))
        .max_by_key(|&s| (score(s), std::cmp::Reverse(s)))
        .unwrap_or(0);
    let changes: Vec<String> = want
        .iter()
        .enumerate()
        .filter_map(|(k, w)| match hay.get(best + k) {
            Some(h) if h.eq_ignore_ascii_case(w) => None,
            Some(h) => Some(format!("-{h} +{w}")),
            None => Some(format!("+{w}")),
        })
        .collect();
    let source = hay[best.min(hay.len())..(best + width).min(hay.len())].join(" ");
    format!(
        "span {piece:?} is not verbatim; closest source text {source:?}; changes: {}",
        changes.join(", ")
    )
}
