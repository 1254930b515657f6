//! Tagged rollout text format.
//!
//! A rollout interleaves `<think>`, `<code>`, `<interpreter>` and `<answer>`
//! blocks. Code blocks wrap a fenced snippet:
//!
//! ```text
//! <code>
//! ```python
//! print(1)
//! ```
//! </code>
//! ```
//!
//! Parsing keeps every byte of the source: text between blocks is stored as
//! gaps and code fences remember their exact delimiters, so
//! `serialize_rollout(&parse_rollout(t)?) == t` for any well-formed `t`.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Think,
    Code,
    Interpreter,
    Answer,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 4] = [
        SegmentKind::Think,
        SegmentKind::Code,
        SegmentKind::Interpreter,
        SegmentKind::Answer,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            SegmentKind::Think => "think",
            SegmentKind::Code => "code",
            SegmentKind::Interpreter => "interpreter",
            SegmentKind::Answer => "answer",
        }
    }

    fn from_tag(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == name)
    }
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Exact delimiters around a fenced snippet.
///
/// `open` runs from the start of the tag interior through the newline that
/// ends the info line (e.g. "```python\n"); `close` runs from the newline
/// before the closing fence to the end of the interior (e.g. "\n```").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fence {
    pub open: String,
    pub close: String,
}

impl Fence {
    pub fn python() -> Self {
        Fence {
            open: "```python\n".to_string(),
            close: "\n```".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Tag interior; for fenced code this is the snippet body only.
    pub text: String,
    /// Byte range of the whole `<tag>…</tag>` block in the source.
    pub byte_span: (usize, usize),
    /// Present for fenced code blocks. `None` on a code segment means the
    /// snippet was not fenced (only produced by the lenient parser).
    pub fence: Option<Fence>,
}

impl Segment {
    fn render_into(&self, out: &mut String) {
        let tag = self.kind.tag();
        out.push('<');
        out.push_str(tag);
        out.push('>');
        match &self.fence {
            Some(f) => {
                out.push_str(&f.open);
                out.push_str(&self.text);
                out.push_str(&f.close);
            }
            None => out.push_str(&self.text),
        }
        out.push_str("</");
        out.push_str(tag);
        out.push('>');
    }

    pub fn span(&self) -> Range<usize> {
        self.byte_span.0..self.byte_span.1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRollout {
    pub segments: Vec<Segment>,
    /// Text outside segments: `gaps[i]` precedes `segments[i]`, the last gap
    /// trails the final segment. Always `segments.len() + 1` entries.
    pub gaps: Vec<String>,
    pub source: String,
}

impl ParsedRollout {
    pub fn empty() -> Self {
        ParsedRollout {
            segments: Vec::new(),
            gaps: vec![String::new()],
            source: String::new(),
        }
    }

    pub fn answer(&self) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == SegmentKind::Answer)
    }

    pub fn of_kind(&self, kind: SegmentKind) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("unbalanced tag <{tag}> at byte {offset}")]
    UnbalancedTag { tag: String, offset: usize },
    #[error("tag <{inner}> at byte {offset} nested inside <{outer}>")]
    NestedTag {
        outer: String,
        inner: String,
        offset: usize,
    },
    #[error("code block at byte {offset} is not wrapped in a ``` fence")]
    MalformedFence { offset: usize },
    #[error("second <answer> block at byte {offset}")]
    MultipleAnswers { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TagToken {
    Open(SegmentKind),
    Close(SegmentKind),
}

/// Finds the next known open/close tag at or after `from`.
fn next_tag(src: &str, from: usize) -> Option<(usize, usize, TagToken)> {
    let bytes = src.as_bytes();
    let mut i = from;
    while let Some(rel) = src[i..].find('<') {
        let at = i + rel;
        let (closing, name_start) = if bytes.get(at + 1) == Some(&b'/') {
            (true, at + 2)
        } else {
            (false, at + 1)
        };
        if let Some(end_rel) = src[name_start..].find('>') {
            let name = &src[name_start..name_start + end_rel];
            if let Some(kind) = SegmentKind::from_tag(name) {
                let end = name_start + end_rel + 1;
                let tok = if closing {
                    TagToken::Close(kind)
                } else {
                    TagToken::Open(kind)
                };
                return Some((at, end, tok));
            }
        }
        i = at + 1;
    }
    None
}

/// Splits a code interior into fence and body.
fn split_fence(interior: &str) -> Option<(Fence, String)> {
    let lead_len = interior.len() - interior.trim_start().len();
    let rest = &interior[lead_len..];
    if !rest.starts_with("```") {
        return None;
    }
    let info_end = rest.find('\n')?;
    if rest[3..info_end].contains('`') {
        return None;
    }
    let open_len = lead_len + info_end + 1;
    let after_open = &interior[open_len..];

    let trail_len = after_open.len() - after_open.trim_end().len();
    let without_trail = &after_open[..after_open.len() - trail_len];
    if !without_trail.ends_with("```") {
        return None;
    }
    let fence_at = without_trail.len() - 3;
    let (body_end, close_start) = if fence_at == 0 {
        (0, 0)
    } else if without_trail.as_bytes()[fence_at - 1] == b'\n' {
        (fence_at - 1, fence_at - 1)
    } else {
        return None;
    };
    let body = &after_open[..body_end];
    let close = &after_open[close_start..];
    Some((
        Fence {
            open: interior[..open_len].to_string(),
            close: close.to_string(),
        },
        body.to_string(),
    ))
}

fn parse_impl(text: &str, lenient_fences: bool) -> Result<ParsedRollout, GrammarError> {
    let mut segments = Vec::new();
    let mut gaps = Vec::new();
    let mut cursor = 0;
    let mut gap_start = 0;

    while let Some((start, open_end, tok)) = next_tag(text, cursor) {
        let kind = match tok {
            TagToken::Open(k) => k,
            TagToken::Close(k) => {
                return Err(GrammarError::UnbalancedTag {
                    tag: format!("/{}", k.tag()),
                    offset: start,
                })
            }
        };
        // The first known tag after the opener must be its own closer.
        let (close_start, close_end) = match next_tag(text, open_end) {
            Some((cs, ce, TagToken::Close(k))) if k == kind => (cs, ce),
            Some((cs, _, TagToken::Open(inner))) => {
                return Err(GrammarError::NestedTag {
                    outer: kind.tag().to_string(),
                    inner: inner.tag().to_string(),
                    offset: cs,
                })
            }
            Some((cs, _, TagToken::Close(other))) => {
                return Err(GrammarError::NestedTag {
                    outer: kind.tag().to_string(),
                    inner: format!("/{}", other.tag()),
                    offset: cs,
                })
            }
            None => {
                return Err(GrammarError::UnbalancedTag {
                    tag: kind.tag().to_string(),
                    offset: start,
                })
            }
        };
        let interior = &text[open_end..close_start];
        let (body, fence) = if kind == SegmentKind::Code {
            match split_fence(interior) {
                Some((fence, body)) => (body, Some(fence)),
                None if lenient_fences => (interior.to_string(), None),
                None => return Err(GrammarError::MalformedFence { offset: start }),
            }
        } else {
            (interior.to_string(), None)
        };
        if kind == SegmentKind::Answer && segments.iter().any(|s: &Segment| s.kind == kind) {
            return Err(GrammarError::MultipleAnswers { offset: start });
        }
        gaps.push(text[gap_start..start].to_string());
        segments.push(Segment {
            kind,
            text: body,
            byte_span: (start, close_end),
            fence,
        });
        cursor = close_end;
        gap_start = close_end;
    }
    gaps.push(text[gap_start..].to_string());
    Ok(ParsedRollout {
        segments,
        gaps,
        source: text.to_string(),
    })
}

/// Parses a rollout, rejecting unfenced code blocks.
pub fn parse_rollout(text: &str) -> Result<ParsedRollout, GrammarError> {
    parse_impl(text, false)
}

/// Like [`parse_rollout`] but keeps unfenced code blocks as segments with
/// `fence: None`, so format checks can report them instead of failing.
pub fn parse_rollout_lenient(text: &str) -> Result<ParsedRollout, GrammarError> {
    parse_impl(text, true)
}

pub fn serialize_rollout(r: &ParsedRollout) -> String {
    let mut out = String::with_capacity(r.source.len());
    for (i, seg) in r.segments.iter().enumerate() {
        if let Some(g) = r.gaps.get(i) {
            out.push_str(g);
        }
        seg.render_into(&mut out);
    }
    if let Some(g) = r.gaps.get(r.segments.len()) {
        out.push_str(g);
    }
    out
}

/// Builds a [`ParsedRollout`] from parts, computing spans and source.
#[derive(Debug, Default, Clone)]
pub struct RolloutBuilder {
    parts: Vec<Part>,
}

#[derive(Debug, Clone)]
enum Part {
    Text(String),
    Seg(SegmentKind, String, Option<Fence>),
}

impl RolloutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(mut self, t: impl Into<String>) -> Self {
        self.parts.push(Part::Text(t.into()));
        self
    }

    pub fn think(mut self, t: impl Into<String>) -> Self {
        self.parts
            .push(Part::Seg(SegmentKind::Think, t.into(), None));
        self
    }

    pub fn code(mut self, snippet: impl Into<String>) -> Self {
        self.parts.push(Part::Seg(
            SegmentKind::Code,
            snippet.into(),
            Some(Fence::python()),
        ));
        self
    }

    pub fn code_with_fence(mut self, snippet: impl Into<String>, fence: Fence) -> Self {
        self.parts
            .push(Part::Seg(SegmentKind::Code, snippet.into(), Some(fence)));
        self
    }

    pub fn code_unfenced(mut self, raw: impl Into<String>) -> Self {
        self.parts
            .push(Part::Seg(SegmentKind::Code, raw.into(), None));
        self
    }

    pub fn interpreter(mut self, t: impl Into<String>) -> Self {
        self.parts
            .push(Part::Seg(SegmentKind::Interpreter, t.into(), None));
        self
    }

    pub fn answer(mut self, t: impl Into<String>) -> Self {
        self.parts
            .push(Part::Seg(SegmentKind::Answer, t.into(), None));
        self
    }

    pub fn build(self) -> ParsedRollout {
        let mut source = String::new();
        let mut segments = Vec::new();
        let mut gaps = Vec::new();
        let mut gap = String::new();
        for part in self.parts {
            match part {
                Part::Text(t) => {
                    source.push_str(&t);
                    gap.push_str(&t);
                }
                Part::Seg(kind, text, fence) => {
                    gaps.push(std::mem::take(&mut gap));
                    let seg = Segment {
                        kind,
                        text,
                        byte_span: (0, 0),
                        fence,
                    };
                    let start = source.len();
                    seg.render_into(&mut source);
                    segments.push(Segment {
                        byte_span: (start, source.len()),
                        ..seg
                    });
                }
            }
        }
        gaps.push(gap);
        ParsedRollout {
            segments,
            gaps,
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatReport {
    pub tags_well_formed: bool,
    pub has_answer: bool,
    pub code_blocks_fenced: bool,
    pub unknown_tags: Vec<String>,
}

impl FormatReport {
    pub fn compliant(&self) -> bool {
        self.tags_well_formed && self.has_answer && self.code_blocks_fenced
    }

    fn malformed(unknown_tags: Vec<String>) -> Self {
        FormatReport {
            tags_well_formed: false,
            has_answer: false,
            code_blocks_fenced: false,
            unknown_tags,
        }
    }
}

/// Collects `<name>` / `</name>` tokens whose name is not one of the four
/// rollout tags, in order of first appearance.
fn scan_unknown_tags(text: &str, out: &mut Vec<String>) {
    let bytes = text.as_bytes();
    let mut i = 0;
    while let Some(rel) = text[i..].find('<') {
        let at = i + rel;
        let mut j = at + 1;
        if bytes.get(j) == Some(&b'/') {
            j += 1;
        }
        let name_start = j;
        if bytes
            .get(j)
            .is_some_and(|b| b.is_ascii_alphabetic() || *b == b'_')
        {
            while bytes
                .get(j)
                .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_' || *b == b'-')
            {
                j += 1;
            }
            if bytes.get(j) == Some(&b'>') {
                let name = &text[name_start..j];
                if SegmentKind::from_tag(name).is_none() {
                    let tag = text[at..=j].to_string();
                    if !out.contains(&tag) {
                        out.push(tag);
                    }
                }
                i = j + 1;
                continue;
            }
        }
        i = at + 1;
    }
}

/// Computes the format report for an already-parsed rollout. Code bodies are
/// not scanned for unknown tags.
pub fn validate_format(r: &ParsedRollout) -> FormatReport {
    let mut unknown = Vec::new();
    for (i, gap) in r.gaps.iter().enumerate() {
        scan_unknown_tags(gap, &mut unknown);
        if let Some(seg) = r.segments.get(i) {
            if seg.kind != SegmentKind::Code {
                scan_unknown_tags(&seg.text, &mut unknown);
            }
        }
    }
    FormatReport {
        tags_well_formed: true,
        has_answer: r.answer().is_some(),
        code_blocks_fenced: r.of_kind(SegmentKind::Code).all(|s| s.fence.is_some()),
        unknown_tags: unknown,
    }
}

/// Format report for raw text: parse failures yield a non-compliant report
/// rather than an error.
pub fn check_format(text: &str) -> FormatReport {
    match parse_rollout_lenient(text) {
        Ok(r) => validate_format(&r),
        Err(_) => {
            let mut unknown = Vec::new();
            scan_unknown_tags(text, &mut unknown);
            FormatReport::malformed(unknown)
        }
    }
}

/// Counts lines that still carry code after removing blank lines, full-line
/// `#` comments and trailing comments. Quotes (including triple quotes that
/// span lines) are tracked so a `#` inside a string is not a comment.
pub fn count_executable_lines(snippet: &str) -> usize {
    #[derive(Clone, Copy, PartialEq)]
    enum Quote {
        None,
        Single(u8),
        Triple(u8),
    }
    let mut state = Quote::None;
    let mut count = 0;
    for line in snippet.lines() {
        let bytes = line.as_bytes();
        let started_in_string = state != Quote::None;
        let mut code_end = bytes.len();
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            match state {
                Quote::None => {
                    if b == b'#' {
                        code_end = i;
                        break;
                    }
                    if b == b'"' || b == b'\'' {
                        if bytes[i..].starts_with(&[b, b, b]) {
                            state = Quote::Triple(b);
                            i += 3;
                            continue;
                        }
                        state = Quote::Single(b);
                    }
                }
                Quote::Single(q) => {
                    if b == b'\\' {
                        i += 2;
                        continue;
                    }
                    if b == q {
                        state = Quote::None;
                    }
                }
                Quote::Triple(q) => {
                    if b == b'\\' {
                        i += 2;
                        continue;
                    }
                    if bytes[i..].starts_with(&[q, q, q]) {
                        state = Quote::None;
                        i += 3;
                        continue;
                    }
                }
            }
            i += 1;
        }
        // Single-quoted strings cannot continue past a line break.
        if matches!(state, Quote::Single(_)) {
            state = Quote::None;
        }
        if started_in_string || !line[..code_end].trim().is_empty() {
            count += 1;
        }
    }
    count
}
