//! Tagged moderation-output grammar.
//!
//! ```text
//! <think>…</think>
//! <reason>content summarization: … risk analysis: … conclusion: …</reason>
//! <violation>Y|N</violation>
//! <result>{major: …, sub: …, ground: [l, r]}</result>   (zero or more)
//! ```
//!
//! Whitespace between tags is ignored. Section labels and result keys are
//! matched ASCII case-insensitively. Label values are normalized to snake-case
//! slugs, so `Gory Content` and `gory_content` parse to the same id.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SUMMARIZATION_LABEL: &str = "content summarization:";
const RISK_LABEL: &str = "risk analysis:";
const CONCLUSION_LABEL: &str = "conclusion:";

/// A closed time span in seconds, `0 <= start <= end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct TimeInterval {
    start: f64,
    end: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntervalError {
    #[error("interval bounds must be finite and non-negative, got [{0}, {1}]")]
    OutOfDomain(f64, f64),
    #[error("interval start {0} exceeds end {1}")]
    Order(f64, f64),
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self, IntervalError> {
        if !start.is_finite() || !end.is_finite() || start < 0.0 || end < 0.0 {
            return Err(IntervalError::OutOfDomain(start, end));
        }
        if start > end {
            return Err(IntervalError::Order(start, end));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0.0
    }

    pub fn overlap(&self, other: &TimeInterval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    /// Intersection over union. Two degenerate intervals at the same point count as identical.
    pub fn iou(&self, other: &TimeInterval) -> f64 {
        let inter = self.overlap(other);
        let union = self.len() + other.len() - inter;
        if union <= 0.0 {
            return if self == other { 1.0 } else { 0.0 };
        }
        (inter / union).clamp(0.0, 1.0)
    }
}

impl TryFrom<(f64, f64)> for TimeInterval {
    type Error = IntervalError;

    fn try_from((start, end): (f64, f64)) -> Result<Self, Self::Error> {
        Self::new(start, end)
    }
}

impl From<TimeInterval> for (f64, f64) {
    fn from(iv: TimeInterval) -> Self {
        (iv.start, iv.end)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasoningChain {
    pub summarization: String,
    pub risk_analysis: String,
    pub conclusion: String,
}

impl ReasoningChain {
    pub fn new(
        summarization: impl Into<String>,
        risk_analysis: impl Into<String>,
        conclusion: impl Into<String>,
    ) -> Self {
        Self {
            summarization: summarization.into(),
            risk_analysis: risk_analysis.into(),
            conclusion: conclusion.into(),
        }
    }

    /// The three sections joined with single spaces.
    pub fn full_text(&self) -> String {
        [&self.summarization, &self.risk_analysis, &self.conclusion]
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn sections(&self) -> [&str; 3] {
        [&self.summarization, &self.risk_analysis, &self.conclusion]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultEntry {
    pub major: String,
    pub sub: String,
    pub ground: TimeInterval,
}

impl ResultEntry {
    pub fn new(major: impl Into<String>, sub: impl Into<String>, ground: TimeInterval) -> Self {
        Self {
            major: major.into(),
            sub: sub.into(),
            ground,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationOutput {
    pub think: String,
    pub reason: ReasoningChain,
    pub violation: bool,
    pub results: Vec<ResultEntry>,
}

impl ModerationOutput {
    /// A non-violating output with empty reasoning.
    pub fn empty() -> Self {
        Self {
            think: String::new(),
            reason: ReasoningChain::default(),
            violation: false,
            results: Vec::new(),
        }
    }

    /// `violation` must agree with whether `results` is non-empty.
    pub fn invariant_holds(&self) -> bool {
        self.violation == !self.results.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseFailureKind {
    MissingTag,
    TagOrder,
    MissingReasonSection,
    BadViolationToken,
    MalformedResultBody,
    IntervalOrder,
    /// Grammar matched but `violation` disagrees with the presence of results.
    Invariant,
}

impl ParseFailureKind {
    pub const ALL: [ParseFailureKind; 7] = [
        ParseFailureKind::MissingTag,
        ParseFailureKind::TagOrder,
        ParseFailureKind::MissingReasonSection,
        ParseFailureKind::BadViolationToken,
        ParseFailureKind::MalformedResultBody,
        ParseFailureKind::IntervalOrder,
        ParseFailureKind::Invariant,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ParseFailureKind::MissingTag => "missing-tag",
            ParseFailureKind::TagOrder => "tag-order",
            ParseFailureKind::MissingReasonSection => "missing-reason-section",
            ParseFailureKind::BadViolationToken => "bad-violation-token",
            ParseFailureKind::MalformedResultBody => "malformed-result-body",
            ParseFailureKind::IntervalOrder => "interval-order",
            ParseFailureKind::Invariant => "invariant",
        }
    }
}

impl fmt::Display for ParseFailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// First grammar rule violated, with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind} at byte {offset}: {message}")]
pub struct ParseFailure {
    pub kind: ParseFailureKind,
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SerializeError {
    #[error("violation flag {violation} disagrees with {count} result entries")]
    Invariant { violation: bool, count: usize },
    #[error("{field} is not trimmed or contains reserved markup: {value:?}")]
    ReservedText { field: &'static str, value: String },
    #[error("label `{0}` is not a normalized snake-case id")]
    BadLabel(String),
}

/// ASCII-lowercases and collapses every run of other characters to `_`.
pub fn normalize_label(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(ch.to_ascii_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, kind: ParseFailureKind, offset: usize, message: impl Into<String>) -> ParseFailure {
        ParseFailure {
            kind,
            offset,
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn expect_open(&mut self, tag: &str) -> Result<(), ParseFailure> {
        self.skip_ws();
        let open = format!("<{tag}>");
        if self.rest().starts_with(&open) {
            self.pos += open.len();
            return Ok(());
        }
        if self.src.contains(&open) {
            Err(self.fail(
                ParseFailureKind::TagOrder,
                self.pos,
                format!("expected {open} here"),
            ))
        } else {
            Err(self.fail(ParseFailureKind::MissingTag, self.pos, format!("missing {open}")))
        }
    }

    /// Consumes up to and including `</tag>`, returning the content and its offset.
    fn take_until_close(&mut self, tag: &str) -> Result<(&'a str, usize), ParseFailure> {
        let close = format!("</{tag}>");
        let start = self.pos;
        match self.rest().find(&close) {
            Some(idx) => {
                let body = &self.src[start..start + idx];
                self.pos = start + idx + close.len();
                Ok((body, start))
            }
            None => Err(self.fail(ParseFailureKind::MissingTag, start, format!("missing {close}"))),
        }
    }
}

fn parse_reason(body: &str, base: usize) -> Result<ReasoningChain, ParseFailure> {
    let lower = body.to_ascii_lowercase();
    let missing = |label: &str, at: usize| ParseFailure {
        kind: ParseFailureKind::MissingReasonSection,
        offset: base + at,
        message: format!("missing `{label}` section"),
    };
    let lead = body.len() - body.trim_start().len();
    if !lower[lead..].starts_with(SUMMARIZATION_LABEL) {
        return Err(missing(SUMMARIZATION_LABEL, lead));
    }
    let s_start = lead + SUMMARIZATION_LABEL.len();
    let r_at = lower[s_start..]
        .find(RISK_LABEL)
        .map(|i| i + s_start)
        .ok_or_else(|| missing(RISK_LABEL, s_start))?;
    let r_start = r_at + RISK_LABEL.len();
    let c_at = lower[r_start..]
        .find(CONCLUSION_LABEL)
        .map(|i| i + r_start)
        .ok_or_else(|| missing(CONCLUSION_LABEL, r_start))?;
    let c_start = c_at + CONCLUSION_LABEL.len();
    Ok(ReasoningChain {
        summarization: body[s_start..r_at].trim().to_string(),
        risk_analysis: body[r_start..c_at].trim().to_string(),
        conclusion: body[c_start..].trim().to_string(),
    })
}

fn parse_result_body(body: &str, base: usize) -> Result<ResultEntry, ParseFailure> {
    let malformed = |at: usize, msg: String| ParseFailure {
        kind: ParseFailureKind::MalformedResultBody,
        offset: base + at,
        message: msg,
    };
    let lead = body.len() - body.trim_start().len();
    let trimmed = body.trim();
    if !(trimmed.starts_with('{') && trimmed.ends_with('}')) || trimmed.len() < 2 {
        return Err(malformed(lead, "result body must be wrapped in braces".into()));
    }
    let inner_off = lead + 1;
    let inner = &trimmed[1..trimmed.len() - 1];

    // Walks `key: value` pairs in fixed order; `pos` is relative to `inner`.
    let mut pos = 0usize;
    let key = |name: &str, pos: &mut usize| -> Result<(), ParseFailure> {
        let rest = &inner[*pos..];
        let skipped = rest.len() - rest.trim_start().len();
        let rest = rest.trim_start();
        if !rest.get(..name.len()).is_some_and(|k| k.eq_ignore_ascii_case(name)) {
            return Err(malformed(inner_off + *pos + skipped, format!("expected key `{name}`")));
        }
        let after = &rest[name.len()..];
        let gap = after.len() - after.trim_start().len();
        if !after.trim_start().starts_with(':') {
            return Err(malformed(
                inner_off + *pos + skipped + name.len() + gap,
                format!("expected `:` after `{name}`"),
            ));
        }
        *pos += skipped + name.len() + gap + 1;
        Ok(())
    };
    let label = |pos: &mut usize, field: &str| -> Result<String, ParseFailure> {
        let rest = &inner[*pos..];
        let Some(comma) = rest.find(',') else {
            return Err(malformed(inner_off + *pos, format!("expected `,` after {field}")));
        };
        let value = rest[..comma].trim().trim_matches(|c| c == '"' || c == '\'');
        let id = normalize_label(value);
        if id.is_empty() || value.contains(['{', '}', '[', ']', ':', '<', '>']) {
            return Err(malformed(inner_off + *pos, format!("invalid {field} label {value:?}")));
        }
        *pos += comma + 1;
        Ok(id)
    };

    key("major", &mut pos)?;
    let major = label(&mut pos, "major")?;
    key("sub", &mut pos)?;
    let sub = label(&mut pos, "sub")?;
    key("ground", &mut pos)?;

    let rest = &inner[pos..];
    let skipped = rest.len() - rest.trim_start().len();
    let ground_at = inner_off + pos + skipped;
    let rest = rest.trim();
    if !(rest.starts_with('[') && rest.ends_with(']')) || rest.len() < 2 {
        return Err(malformed(ground_at, "ground must be `[l, r]`".into()));
    }
    let nums: Vec<&str> = rest[1..rest.len() - 1].split(',').collect();
    if nums.len() != 2 {
        return Err(malformed(ground_at, "ground must hold exactly two numbers".into()));
    }
    let mut bounds = [0.0f64; 2];
    for (slot, text) in bounds.iter_mut().zip(&nums) {
        let t = text.trim();
        *slot = match t.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => v,
            _ => return Err(malformed(ground_at, format!("bad time value {t:?}"))),
        };
    }
    let ground = TimeInterval::new(bounds[0], bounds[1]).map_err(|e| ParseFailure {
        kind: ParseFailureKind::IntervalOrder,
        offset: ground_at,
        message: e.to_string(),
    })?;
    Ok(ResultEntry { major, sub, ground })
}

/// Parses a raw model response against the moderation grammar.
pub fn parse_output(raw: &str) -> Result<ModerationOutput, ParseFailure> {
    let mut cur = Cursor { src: raw, pos: 0 };

    cur.expect_open("think")?;
    let (think, _) = cur.take_until_close("think")?;

    cur.expect_open("reason")?;
    let (reason_body, reason_at) = cur.take_until_close("reason")?;
    let reason = parse_reason(reason_body, reason_at)?;

    cur.expect_open("violation")?;
    let (token, token_at) = cur.take_until_close("violation")?;
    let violation = match token.trim() {
        "Y" => true,
        "N" => false,
        other => {
            return Err(cur.fail(
                ParseFailureKind::BadViolationToken,
                token_at,
                format!("expected Y or N, got {other:?}"),
            ))
        }
    };

    let mut results = Vec::new();
    let mut first_result_at = None;
    loop {
        cur.skip_ws();
        if cur.rest().is_empty() {
            break;
        }
        if !cur.rest().starts_with("<result>") {
            return Err(cur.fail(
                ParseFailureKind::TagOrder,
                cur.pos,
                "unexpected content after <violation>",
            ));
        }
        first_result_at.get_or_insert(cur.pos);
        cur.pos += "<result>".len();
        let (body, body_at) = cur.take_until_close("result")?;
        results.push(parse_result_body(body, body_at)?);
    }

    if !violation && !results.is_empty() {
        return Err(cur.fail(
            ParseFailureKind::Invariant,
            first_result_at.unwrap_or(cur.pos),
            "violation is N but results are present",
        ));
    }
    if violation && results.is_empty() {
        return Err(cur.fail(
            ParseFailureKind::Invariant,
            cur.pos,
            "violation is Y but no results are present",
        ));
    }

    Ok(ModerationOutput {
        think: think.trim().to_string(),
        reason,
        violation,
        results,
    })
}

/// Indicator reward: 1 when the response parses, 0 otherwise.
pub fn format_reward(raw: &str) -> f64 {
    if parse_output(raw).is_ok() {
        1.0
    } else {
        0.0
    }
}

/// Two fractional digits when that is exact, shortest round-trip form otherwise.
fn format_seconds(v: f64) -> String {
    let fixed = format!("{v:.2}");
    if fixed.parse::<f64>().ok() == Some(v) {
        fixed
    } else {
        format!("{v}")
    }
}

fn check_text(field: &'static str, value: &str, reason_section: bool) -> Result<(), SerializeError> {
    let lower = value.to_ascii_lowercase();
    let bad = value.trim() != value
        || value.contains('<')
        || value.contains('>')
        || (reason_section
            && [SUMMARIZATION_LABEL, RISK_LABEL, CONCLUSION_LABEL]
                .iter()
                .any(|l| lower.contains(l)));
    if bad {
        return Err(SerializeError::ReservedText {
            field,
            value: value.to_string(),
        });
    }
    Ok(())
}

/// Canonical text form; `parse_output` of the result reproduces `out`.
pub fn serialize_output(out: &ModerationOutput) -> Result<String, SerializeError> {
    if !out.invariant_holds() {
        return Err(SerializeError::Invariant {
            violation: out.violation,
            count: out.results.len(),
        });
    }
    check_text("think", &out.think, false)?;
    check_text("summarization", &out.reason.summarization, true)?;
    check_text("risk_analysis", &out.reason.risk_analysis, true)?;
    check_text("conclusion", &out.reason.conclusion, true)?;
    for entry in &out.results {
        for label in [&entry.major, &entry.sub] {
            if label.is_empty() || normalize_label(label) != *label {
                return Err(SerializeError::BadLabel(label.clone()));
            }
        }
    }

    let section = |label: &str, text: &str| {
        if text.is_empty() {
            label.to_string()
        } else {
            format!("{label} {text}")
        }
    };
    let mut s = String::new();
    s.push_str("<think>");
    s.push_str(&out.think);
    s.push_str("</think><reason>");
    s.push_str(&section(SUMMARIZATION_LABEL, &out.reason.summarization));
    s.push(' ');
    s.push_str(&section(RISK_LABEL, &out.reason.risk_analysis));
    s.push(' ');
    s.push_str(&section(CONCLUSION_LABEL, &out.reason.conclusion));
    s.push_str("</reason><violation>");
    s.push_str(if out.violation { "Y" } else { "N" });
    s.push_str("</violation>");
    for entry in &out.results {
        s.push_str(&format!(
            "<result>{{major: {}, sub: {}, ground: [{}, {}]}}</result>",
            entry.major,
            entry.sub,
            format_seconds(entry.ground.start()),
            format_seconds(entry.ground.end()),
        ));
    }
    Ok(s)
}
