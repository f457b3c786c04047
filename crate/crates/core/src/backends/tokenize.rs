//! Caption post-processing: special-token stripping and token-budget truncation.

/// A token as a byte span of the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<TokenSpan>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Subword-style stand-in: every whitespace-separated word is cut into
/// pieces of at most `piece_chars` characters.
#[derive(Debug, Clone, Copy)]
pub struct ChunkTokenizer {
    pub piece_chars: usize,
}

impl Default for ChunkTokenizer {
    fn default() -> Self {
        ChunkTokenizer { piece_chars: 4 }
    }
}

impl Tokenizer for ChunkTokenizer {
    fn tokenize(&self, text: &str) -> Vec<TokenSpan> {
        let piece = self.piece_chars.max(1);
        let mut spans = Vec::new();
        let mut start: Option<usize> = None;
        let mut chars_in_piece = 0;
        for (i, ch) in text.char_indices() {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    spans.push(TokenSpan { start: s, end: i });
                }
                chars_in_piece = 0;
                continue;
            }
            if chars_in_piece == piece {
                let s = start.take().expect("piece in progress");
                spans.push(TokenSpan { start: s, end: i });
                chars_in_piece = 0;
            }
            if start.is_none() {
                start = Some(i);
            }
            chars_in_piece += 1;
        }
        if let Some(s) = start {
            spans.push(TokenSpan { start: s, end: text.len() });
        }
        spans
    }
}

/// Removes markup tokens such as `<s>`, `</s>`, `<pad>`, `<|endoftext|>` and
/// `<Image>`, then collapses whitespace.
pub fn strip_special_tokens(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('<') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('>') {
            Some(close) if close > 0 && !after[..close].contains(char::is_whitespace) => {
                out.push(' ');
                rest = &after[close + 1..];
            }
            _ => {
                out.push('<');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keeps at most `limit` tokens. If the cut falls inside a word, the partial
/// word is dropped as well.
pub fn truncate_to_tokens(text: &str, tokenizer: &dyn Tokenizer, limit: usize) -> String {
    let spans = tokenizer.tokenize(text);
    if spans.len() <= limit {
        return text.trim().to_string();
    }
    if limit == 0 {
        return String::new();
    }
    let cut = spans[limit - 1].end;
    let next = spans[limit].start;
    let mut kept = &text[..cut];
    if next == cut {
        // The next token continues the same word.
        kept = match kept.rfind(char::is_whitespace) {
            Some(ws) => &kept[..ws],
            None => "",
        };
    }
    kept.trim().to_string()
}
