//! AFRL trajectory model, canonical text rendering and the strict parser
//! behind the format gate.
//!
//! The canonical layout is line oriented (`\n` separators, one trailing
//! newline):
//!
//! ```text
//! [3]
//! <think>
//! Step 1: Intent. Informational need identified.
//! Step 2: Domain. Query and document domains compared. \boxed{Yes}
//! Step 3: Freshness. Timeliness requirement assessed. \boxed{None}
//! Step 4: Irrelevant? Core entities matched. \boxed{No}
//! Step 5: Weak? Direct answer provided. \boxed{No}
//! Step 6: Strong? Query fully addressed. \boxed{Yes}
//! Step 7: Premium? Rich supporting detail. \boxed{Yes}
//! Step 8: Official? Not an authoritative source. \boxed{No}
//! Step 9: Synthesis. Evidence consolidated.
//! </think>
//! [3]
//! ```
//!
//! Only the header (`Step n:`) and the boxed values are structural. The
//! prose between them is never inspected by the parser. Steps 2 to 8 carry
//! exactly one `\boxed{Yes|No|None}`; steps 1 and 9 carry none.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of trace steps in every trajectory.
pub const NUM_STEPS: usize = 9;
/// Number of policy-controlled checkpoints (steps 4 to 8).
pub const NUM_CHECKPOINTS: usize = 5;
/// Number of policy-controlled slots: decision, five checkpoints, final.
pub const NUM_SLOTS: usize = 7;
/// Number of ordinal relevance levels.
pub const NUM_LABELS: usize = 5;

/// Ordinal relevance score in `0..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RelevanceLabel(u8);

impl RelevanceLabel {
    pub const MAX: u8 = 4;

    pub fn new(value: u8) -> Option<Self> {
        (value <= Self::MAX).then_some(Self(value))
    }

    /// Panics if `index > 4`; for internal use with slot tokens.
    pub fn from_index(index: usize) -> Self {
        Self::new(index as u8).expect("relevance index out of range")
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Binary grouping used by 2-class accuracy: `{0,1}` vs `{2,3,4}`.
    pub fn is_relevant(self) -> bool {
        self.0 >= 2
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..=Self::MAX).map(Self)
    }

    pub fn distance(self, other: Self) -> u8 {
        self.0.abs_diff(other.0)
    }
}

impl TryFrom<u8> for RelevanceLabel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v).ok_or_else(|| format!("relevance label {v} outside 0..=4"))
    }
}

impl From<RelevanceLabel> for u8 {
    fn from(l: RelevanceLabel) -> u8 {
        l.0
    }
}

impl fmt::Display for RelevanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CheckpointAnswer {
    Yes,
    No,
    None,
}

impl CheckpointAnswer {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Yes => "Yes",
            Self::No => "No",
            Self::None => "None",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Yes" => Some(Self::Yes),
            "No" => Some(Self::No),
            "None" => Some(Self::None),
            _ => None,
        }
    }

    pub fn from_bool(yes: bool) -> Self {
        if yes {
            Self::Yes
        } else {
            Self::No
        }
    }

    pub fn is_yes(self) -> bool {
        self == Self::Yes
    }

    /// Policy token: Yes = 0, No = 1; `None` has no token.
    pub fn token(self) -> Option<usize> {
        match self {
            Self::Yes => Some(0),
            Self::No => Some(1),
            Self::None => None,
        }
    }
}

impl fmt::Display for CheckpointAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One of the seven policy-controlled positions in a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotIndex(u8);

impl SlotIndex {
    pub const DECISION: Self = Self(0);
    pub const FINAL: Self = Self(6);

    pub fn new(ordinal: usize) -> Option<Self> {
        (ordinal < NUM_SLOTS).then_some(Self(ordinal as u8))
    }

    /// Slot for checkpoint `i` (0 = irrelevant, ..., 4 = official).
    pub fn checkpoint(i: usize) -> Self {
        assert!(i < NUM_CHECKPOINTS, "checkpoint index {i} out of range");
        Self(1 + i as u8)
    }

    pub fn ordinal(self) -> usize {
        self.0 as usize
    }

    pub fn is_label_slot(self) -> bool {
        self.0 == 0 || self.0 == 6
    }

    /// 5 for the label slots, 2 (`Yes`, `No`) for checkpoint slots.
    pub fn vocab_size(self) -> usize {
        if self.is_label_slot() {
            NUM_LABELS
        } else {
            2
        }
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..NUM_SLOTS as u8).map(Self)
    }
}

/// Vocabulary sizes of the seven slots, in slot order.
pub const SLOT_VOCAB: [usize; NUM_SLOTS] = [5, 2, 2, 2, 2, 2, 5];

/// A complete answer-first trajectory: decision token, nine-step trace and
/// final confirmation token.
///
/// Steps 1 and 9 are template prose. Steps 2 and 3 carry template boxed
/// values (`domain`, `freshness`). Steps 4 to 8 carry the critical
/// checkpoints in the order irrelevant, weak, strong, premium, official.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub decision: RelevanceLabel,
    pub domain: CheckpointAnswer,
    pub freshness: CheckpointAnswer,
    pub checkpoints: [CheckpointAnswer; NUM_CHECKPOINTS],
    pub final_label: RelevanceLabel,
}

/// Read-only view of one trace step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub number: usize,
    pub title: &'static str,
    pub rationale: &'static str,
    pub boxed: Option<CheckpointAnswer>,
}

const TITLES: [&str; NUM_STEPS] = [
    "Intent.",
    "Domain.",
    "Freshness.",
    "Irrelevant?",
    "Weak?",
    "Strong?",
    "Premium?",
    "Official?",
    "Synthesis.",
];

fn rationale(step: usize, boxed: Option<CheckpointAnswer>) -> &'static str {
    use CheckpointAnswer::*;
    match (step, boxed) {
        (1, _) => "Informational need identified.",
        (2, _) => "Query and document domains compared.",
        (3, _) => "Timeliness requirement assessed.",
        (4, Some(Yes)) => "Core entities missing.",
        (4, _) => "Core entities matched.",
        (5, Some(Yes)) => "Only partial coverage.",
        (5, _) => "Direct answer provided.",
        (6, Some(Yes)) => "Query fully addressed.",
        (6, _) => "Main need not addressed.",
        (7, Some(Yes)) => "Rich supporting detail.",
        (7, _) => "Limited supporting detail.",
        (8, Some(Yes)) => "Authoritative source.",
        (8, _) => "Not an authoritative source.",
        _ => "Evidence consolidated.",
    }
}

impl Trajectory {
    /// Builds a trajectory with the template values for steps 2 and 3.
    pub fn new(
        decision: RelevanceLabel,
        checkpoints: [CheckpointAnswer; NUM_CHECKPOINTS],
        final_label: RelevanceLabel,
    ) -> Self {
        Self {
            decision,
            domain: CheckpointAnswer::Yes,
            freshness: CheckpointAnswer::None,
            checkpoints,
            final_label,
        }
    }

    pub fn step(&self, number: usize) -> Step {
        assert!((1..=NUM_STEPS).contains(&number), "step {number} out of range");
        let boxed = match number {
            2 => Some(self.domain),
            3 => Some(self.freshness),
            4..=8 => Some(self.checkpoints[number - 4]),
            _ => None,
        };
        Step {
            number,
            title: TITLES[number - 1],
            rationale: rationale(number, boxed),
            boxed,
        }
    }

    /// The nine trace steps in order.
    pub fn trace(&self) -> [Step; NUM_STEPS] {
        std::array::from_fn(|i| self.step(i + 1))
    }

    /// Token index per controlled slot, or the first slot whose value the
    /// slot vocabulary cannot express (a `None` checkpoint).
    pub fn slot_tokens(&self) -> Result<[usize; NUM_SLOTS], SlotIndex> {
        let mut out = [0usize; NUM_SLOTS];
        out[0] = self.decision.index();
        for (i, c) in self.checkpoints.iter().enumerate() {
            out[1 + i] = c.token().ok_or(SlotIndex::checkpoint(i))?;
        }
        out[6] = self.final_label.index();
        Ok(out)
    }

    /// Inverse of [`Trajectory::slot_tokens`]; panics on out-of-vocabulary tokens.
    pub fn from_slot_tokens(tokens: &[usize; NUM_SLOTS]) -> Self {
        let checkpoints = std::array::from_fn(|i| match tokens[1 + i] {
            0 => CheckpointAnswer::Yes,
            1 => CheckpointAnswer::No,
            t => panic!("checkpoint token {t} out of range"),
        });
        Self::new(
            RelevanceLabel::from_index(tokens[0]),
            checkpoints,
            RelevanceLabel::from_index(tokens[6]),
        )
    }
}

/// First grammar rule violated by a candidate trajectory text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("missing_decision")]
    MissingDecision,
    #[error("missing_step_{0}")]
    MissingStep(usize),
    #[error("bad_boxed_{0}")]
    BadBoxed(usize),
    #[error("missing_final")]
    MissingFinal,
    #[error("extra_content")]
    ExtraContent,
}

impl FormatError {
    /// Stable machine-readable code (same as `Display`).
    pub fn code(&self) -> String {
        self.to_string()
    }
}

fn render_step(out: &mut String, step: &Step) {
    out.push_str("Step ");
    out.push_str(&step.number.to_string());
    out.push_str(": ");
    out.push_str(step.title);
    out.push(' ');
    out.push_str(step.rationale);
    if let Some(b) = step.boxed {
        out.push_str(" \\boxed{");
        out.push_str(b.as_str());
        out.push('}');
    }
    out.push('\n');
}

/// Canonical text for a trajectory.
pub fn render_trajectory(t: &Trajectory) -> String {
    let mut out = String::with_capacity(512);
    out.push('[');
    out.push_str(&t.decision.to_string());
    out.push_str("]\n<think>\n");
    for step in t.trace() {
        render_step(&mut out, &step);
    }
    out.push_str("</think>\n[");
    out.push_str(&t.final_label.to_string());
    out.push_str("]\n");
    out
}

fn parse_label_line(line: &str) -> Option<RelevanceLabel> {
    let inner = line.strip_prefix('[')?.strip_suffix(']')?;
    let mut chars = inner.chars();
    let c = chars.next()?;
    if chars.next().is_some() {
        return None;
    }
    RelevanceLabel::new(c.to_digit(10)? as u8)
}

/// Extracts every `\boxed{...}`; `Err` if one is unterminated or unknown.
fn boxed_values(line: &str) -> Result<Vec<CheckpointAnswer>, ()> {
    const OPEN: &str = "\\boxed{";
    let mut out = Vec::new();
    let mut rest = line;
    while let Some(pos) = rest.find(OPEN) {
        let after = &rest[pos + OPEN.len()..];
        let close = after.find('}').ok_or(())?;
        out.push(CheckpointAnswer::parse(&after[..close]).ok_or(())?);
        rest = &after[close + 1..];
    }
    if rest.contains("\\boxed") {
        return Err(());
    }
    Ok(out)
}

fn step_header_matches(line: &str, n: usize) -> bool {
    line.strip_prefix("Step ")
        .and_then(|r| r.strip_prefix(char::from_digit(n as u32, 10).unwrap()))
        .is_some_and(|r| r.starts_with(':'))
}

/// Strict parse of the canonical layout. Trailing whitespace after the
/// final label is tolerated; anything else that deviates is an error.
pub fn parse_trajectory(text: &str) -> Result<Trajectory, FormatError> {
    let mut lines = text.trim_end().split('\n').map(|l| l.trim_end_matches('\r'));

    let decision = lines
        .next()
        .and_then(parse_label_line)
        .ok_or(FormatError::MissingDecision)?;

    if lines.next() != Some("<think>") {
        return Err(FormatError::MissingStep(1));
    }

    let mut boxed = [CheckpointAnswer::None; NUM_STEPS];
    for n in 1..=NUM_STEPS {
        let line = match lines.next() {
            Some(l) if step_header_matches(l, n) => l,
            _ => return Err(FormatError::MissingStep(n)),
        };
        let values = boxed_values(line).map_err(|_| FormatError::BadBoxed(n))?;
        let expected = if (2..=8).contains(&n) { 1 } else { 0 };
        if values.len() != expected {
            return Err(FormatError::BadBoxed(n));
        }
        if let Some(&v) = values.first() {
            boxed[n - 1] = v;
        }
    }

    match lines.next() {
        Some("</think>") => {}
        None => return Err(FormatError::MissingFinal),
        Some(_) => return Err(FormatError::ExtraContent),
    }

    let final_label = lines
        .next()
        .and_then(parse_label_line)
        .ok_or(FormatError::MissingFinal)?;

    if lines.next().is_some() {
        return Err(FormatError::ExtraContent);
    }

    Ok(Trajectory {
        decision,
        domain: boxed[1],
        freshness: boxed[2],
        checkpoints: [boxed[3], boxed[4], boxed[5], boxed[6], boxed[7]],
        final_label,
    })
}

/// `1` iff the text parses as a trajectory.
pub fn format_gate(text: &str) -> u8 {
    u8::from(parse_trajectory(text).is_ok())
}
