//! Greedy word-wrap over abstract glyph metrics.
//!
//! The wrapper is deliberately decoupled from the rasterizer so tests can
//! drive it with synthetic metrics.

use super::RenderError;

/// Horizontal advance source for the wrapper.
pub trait GlyphMetrics {
    /// Advance width of one character, in pixels.
    fn advance(&self, ch: char) -> f64;

    fn text_advance(&self, text: &str) -> f64 {
        text.chars().map(|c| self.advance(c)).sum()
    }
}

/// Splits `text` into lines no wider than `max_width_px`.
///
/// Words are kept intact when they fit; a word wider than the full line is
/// hard-broken at glyph boundaries. Existing newlines are hard breaks.
/// Whitespace at a wrap point is consumed, not carried to the next line.
pub fn wrap_text<M: GlyphMetrics>(
    text: &str,
    metrics: &M,
    max_width_px: f64,
) -> Result<Vec<String>, RenderError> {
    let widest = text
        .chars()
        .filter(|c| *c != '\n')
        .map(|c| metrics.advance(c))
        .fold(0.0f64, f64::max);
    if widest > max_width_px {
        return Err(RenderError::WidthTooNarrow {
            max_width_px,
            widest_px: widest,
        });
    }

    let mut lines = Vec::new();
    for raw_line in text.split('\n') {
        wrap_one_line(raw_line, metrics, max_width_px, &mut lines);
    }
    // A trailing newline contributes an empty final line; pure-empty input
    // renders nothing at all.
    if text.is_empty() {
        lines.clear();
    }
    Ok(lines)
}

fn wrap_one_line<M: GlyphMetrics>(
    raw: &str,
    metrics: &M,
    max_width_px: f64,
    out: &mut Vec<String>,
) {
    let mut line = String::new();
    let mut line_w = 0.0f64;

    for token in split_tokens(raw) {
        let token_w = metrics.text_advance(token);
        let is_space = token.chars().all(char::is_whitespace);

        if line_w + token_w <= max_width_px {
            line.push_str(token);
            line_w += token_w;
            continue;
        }

        if is_space {
            // The space run that triggers the wrap is consumed.
            out.push(take_trimmed(&mut line));
            line_w = 0.0;
            continue;
        }

        if token_w <= max_width_px {
            out.push(take_trimmed(&mut line));
            line = token.to_string();
            line_w = token_w;
            continue;
        }

        // Oversized word: emit what we have, then hard-break by glyphs.
        if !line.is_empty() {
            out.push(take_trimmed(&mut line));
        }
        line_w = 0.0;
        for ch in token.chars() {
            let w = metrics.advance(ch);
            if line_w + w > max_width_px && !line.is_empty() {
                out.push(std::mem::take(&mut line));
                line_w = 0.0;
            }
            line.push(ch);
            line_w += w;
        }
    }
    out.push(take_trimmed(&mut line));
}

fn take_trimmed(line: &mut String) -> String {
    let trimmed = line.trim_end().to_string();
    line.clear();
    trimmed
}

/// Alternating runs of whitespace and non-whitespace.
fn split_tokens(s: &str) -> impl Iterator<Item = &str> {
    let mut rest = s;
    std::iter::from_fn(move || {
        if rest.is_empty() {
            return None;
        }
        let first_ws = rest.chars().next().unwrap().is_whitespace();
        let end = rest
            .char_indices()
            .find(|(_, c)| c.is_whitespace() != first_ws)
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        let (tok, tail) = rest.split_at(end);
        rest = tail;
        Some(tok)
    })
}
