//! The six reward components.
//!
//! Every function here is pure: identical inputs give bit-identical outputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normal;
use crate::parser::StructureReport;
use crate::trace::{ParsedTurn, TagCounts, TagKind, Transcript};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("NONPOSITIVE_SCALE: scale must be > 0, got {0}")]
    NonpositiveScale(f64),
    #[error("EMPTY_TRUTHS: at least one accepted answer is required")]
    EmptyTruths,
}

// ---------------------------------------------------------------------------
// Correctness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationPolicy {
    pub case_fold: bool,
    pub collapse_whitespace: bool,
    pub strip_edge_punctuation: bool,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        Self {
            case_fold: true,
            collapse_whitespace: true,
            strip_edge_punctuation: true,
        }
    }
}

fn is_edge_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{2026}'
                | '\u{00BF}'
                | '\u{00A1}'
        )
}

/// Idempotent answer normalization.
pub fn normalize_answer(s: &str, policy: NormalizationPolicy) -> String {
    let mut out = if policy.case_fold {
        s.to_lowercase()
    } else {
        s.to_string()
    };
    if policy.collapse_whitespace {
        out = out.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    if policy.strip_edge_punctuation {
        let trimmed = if policy.collapse_whitespace {
            out.trim_matches(|c: char| is_edge_punctuation(c) || c.is_whitespace())
        } else {
            out.trim_matches(is_edge_punctuation)
        };
        out = trimmed.to_string();
    }
    out
}

/// 1.0 when some accepted answer, normalized, occurs inside the normalized
/// answer; 0.0 otherwise. Aliases that normalize to nothing never match.
pub fn correctness_reward(
    answer: &str,
    truths: &[String],
    policy: NormalizationPolicy,
) -> Result<f64, KernelError> {
    if truths.is_empty() {
        return Err(KernelError::EmptyTruths);
    }
    let answer = normalize_answer(answer, policy);
    let hit = truths.iter().any(|t| {
        let t = normalize_answer(t, policy);
        !t.is_empty() && answer.contains(&t)
    });
    Ok(if hit { 1.0 } else { 0.0 })
}

// ---------------------------------------------------------------------------
// XML validity and format
// ---------------------------------------------------------------------------

/// `N_answer × (N_think + N_tool) / N_turn` clamped to 1, or 0 on structural
/// failure or when there are no assistant turns.
pub fn xml_validity_reward(counts: &TagCounts, report: &StructureReport) -> f64 {
    xml_validity_reward_raw(counts, report).min(1.0)
}

/// [`xml_validity_reward`] without the upper clamp.
pub fn xml_validity_reward_raw(counts: &TagCounts, report: &StructureReport) -> f64 {
    if counts.n_turn == 0 || report.has_structural_violation() {
        return 0.0;
    }
    (counts.n_answer * (counts.n_think + counts.n_tool)) as f64 / counts.n_turn as f64
}

/// Canonical assistant turn: optional single think span, then exactly one
/// tool call or one answer, whitespace elsewhere and no violations.
pub fn is_compliant_turn(turn: &ParsedTurn) -> bool {
    if !turn.violations.is_empty() {
        return false;
    }
    let kinds: Vec<TagKind> = turn.spans.iter().map(|s| s.kind).collect();
    let shape_ok = matches!(
        kinds.as_slice(),
        [TagKind::ToolCall | TagKind::Answer]
            | [TagKind::Think, TagKind::ToolCall | TagKind::Answer]
    );
    if !shape_ok {
        return false;
    }
    let content = turn.content();
    let mut cursor = 0;
    for span in &turn.spans {
        if !content[cursor..span.byte_range.start].trim().is_empty() {
            return false;
        }
        cursor = span.byte_range.end;
    }
    content[cursor..].trim().is_empty()
}

/// Fraction of assistant turns with the canonical shape; 0 without assistant turns.
pub fn format_adherence_reward(t: &Transcript) -> f64 {
    let (compliant, total) = t.assistant_turns().fold((0usize, 0usize), |(c, n), turn| {
        (c + usize::from(is_compliant_turn(turn)), n + 1)
    });
    if total == 0 {
        0.0
    } else {
        compliant as f64 / total as f64
    }
}

// ---------------------------------------------------------------------------
// Tool use
// ---------------------------------------------------------------------------

pub const SEARCH_TOOL: &str = "search";
pub const VISIT_TOOL: &str = "visit";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallEntry {
    pub tool_name: String,
    pub ok: bool,
}

/// Outcome of every tool call in an episode, in call order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ToolCallLog {
    entries: Vec<ToolCallEntry>,
}

impl ToolCallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tool_name: impl Into<String>, ok: bool) {
        self.entries.push(ToolCallEntry {
            tool_name: tool_name.into(),
            ok,
        });
    }

    pub fn entries(&self) -> &[ToolCallEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ok_count(&self) -> usize {
        self.entries.iter().filter(|e| e.ok).count()
    }

    /// Issued searches, successful or not.
    pub fn search_count(&self) -> usize {
        self.count_named(SEARCH_TOOL)
    }

    /// Issued visits, successful or not.
    pub fn visit_count(&self) -> usize {
        self.count_named(VISIT_TOOL)
    }

    fn count_named(&self, name: &str) -> usize {
        self.entries.iter().filter(|e| e.tool_name == name).count()
    }
}

impl FromIterator<ToolCallEntry> for ToolCallLog {
    fn from_iter<I: IntoIterator<Item = ToolCallEntry>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

impl<'a> FromIterator<(&'a str, bool)> for ToolCallLog {
    fn from_iter<I: IntoIterator<Item = (&'a str, bool)>>(iter: I) -> Self {
        iter.into_iter()
            .map(|(name, ok)| ToolCallEntry {
                tool_name: name.to_string(),
                ok,
            })
            .collect()
    }
}

#[derive(Serialize)]
struct ToolCallLogWire<'a> {
    entries: &'a [ToolCallEntry],
    search_count: usize,
    visit_count: usize,
}

impl Serialize for ToolCallLog {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ToolCallLogWire {
            entries: &self.entries,
            search_count: self.search_count(),
            visit_count: self.visit_count(),
        }
        .serialize(serializer)
    }
}

/// Accepts either a bare list of entries or an object with an `entries` list;
/// counts are always recomputed.
impl<'de> Deserialize<'de> for ToolCallLog {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            List(Vec<ToolCallEntry>),
            Object { entries: Vec<ToolCallEntry> },
        }
        Ok(match Repr::deserialize(deserializer)? {
            Repr::List(entries) | Repr::Object { entries } => ToolCallLog { entries },
        })
    }
}

/// Share of calls that got a non-error response; 0 when nothing was called.
pub fn tool_execution_reward(log: &ToolCallLog) -> f64 {
    if log.is_empty() {
        0.0
    } else {
        log.ok_count() as f64 / log.len() as f64
    }
}

/// Fixed reward when searches outnumber visits.
pub const OVER_SEARCH_PENALTY: f64 = -0.5;

/// `((visits/searches − 1)/4)^0.25`, clamped to 1, with a −0.5 penalty when
/// searches outnumber visits and 0 when nothing was searched.
pub fn visit_search_reward(visit_count: usize, search_count: usize) -> f64 {
    visit_search_reward_raw(visit_count, search_count).min(1.0)
}

/// [`visit_search_reward`] without the upper clamp.
pub fn visit_search_reward_raw(visit_count: usize, search_count: usize) -> f64 {
    if search_count > visit_count {
        OVER_SEARCH_PENALTY
    } else if search_count == 0 {
        0.0
    } else {
        let ratio = visit_count as f64 / search_count as f64;
        ((ratio - 1.0) / 4.0).powf(0.25)
    }
}

// ---------------------------------------------------------------------------
// Thinking length
// ---------------------------------------------------------------------------

/// `(2/scale)·φ(z)·Φ(shape·z)` with `z = (x − loc)/scale`.
pub fn skew_normal_density(x: f64, loc: f64, scale: f64, shape: f64) -> Result<f64, KernelError> {
    check_scale(scale)?;
    let z = (x - loc) / scale;
    Ok(2.0 / scale * normal::pdf(z) * normal::cdf(shape * z))
}

/// Natural log of [`skew_normal_density`]; finite where the density underflows.
pub fn skew_normal_ln_density(
    x: f64,
    loc: f64,
    scale: f64,
    shape: f64,
) -> Result<f64, KernelError> {
    check_scale(scale)?;
    let z = (x - loc) / scale;
    Ok(std::f64::consts::LN_2 - scale.ln() + normal::ln_pdf(z) + normal::ln_cdf(shape * z))
}

fn check_scale(scale: f64) -> Result<(), KernelError> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(KernelError::NonpositiveScale(scale))
    }
}

const NORMALIZER_GRID_POINTS: usize = 4000;
const INV_GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Supremum of the skew-normal density over `x ≥ 0`.
///
/// Dense grid over `[0, max(loc, 0) + 10·scale]`, then golden-section
/// refinement inside the bracket around the best grid point. The density is
/// log-concave, so the bracket holds the restricted maximum. With a non-positive
/// unconstrained mode the answer is the density at exactly `x = 0`.
pub fn think_normalizer(loc: f64, scale: f64, shape: f64) -> Result<f64, KernelError> {
    check_scale(scale)?;
    let f = |x: f64| {
        let z = (x - loc) / scale;
        2.0 / scale * normal::pdf(z) * normal::cdf(shape * z)
    };
    let upper = loc.max(0.0) + 10.0 * scale;
    let step = upper / NORMALIZER_GRID_POINTS as f64;

    let (best_i, best) = (0..=NORMALIZER_GRID_POINTS)
        .map(|i| (i, f(i as f64 * step)))
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
        );

    let mut lo = best_i.saturating_sub(1) as f64 * step;
    let mut hi = ((best_i + 1).min(NORMALIZER_GRID_POINTS)) as f64 * step;
    let mut a = hi - INV_GOLDEN * (hi - lo);
    let mut b = lo + INV_GOLDEN * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-10 * scale {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_GOLDEN * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_GOLDEN * (hi - lo);
            fa = f(a);
        }
    }
    let refined = f(0.5 * (lo + hi)).max(fa).max(fb);
    Ok(best.max(refined))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThinkShape {
    pub loc: f64,
    pub scale: f64,
    pub shape: f64,
}

impl Default for ThinkShape {
    fn default() -> Self {
        Self {
            loc: 35.0,
            scale: 150.0,
            shape: -5.0,
        }
    }
}

/// Skew-normal parameters for the thinking-length reward plus the supremum
/// used to scale it into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThinkShape", into = "ThinkShape")]
pub struct ThinkRewardParams {
    pub loc: f64,
    pub scale: f64,
    pub shape: f64,
    pub normalizer: f64,
}

impl ThinkRewardParams {
    pub fn new(loc: f64, scale: f64, shape: f64) -> Result<Self, KernelError> {
        Ok(Self {
            loc,
            scale,
            shape,
            normalizer: think_normalizer(loc, scale, shape)?,
        })
    }
}

impl Default for ThinkRewardParams {
    fn default() -> Self {
        let s = ThinkShape::default();
        Self::new(s.loc, s.scale, s.shape).expect("default scale is positive")
    }
}

impl TryFrom<ThinkShape> for ThinkRewardParams {
    type Error = KernelError;

    fn try_from(s: ThinkShape) -> Result<Self, Self::Error> {
        Self::new(s.loc, s.scale, s.shape)
    }
}

impl From<ThinkRewardParams> for ThinkShape {
    fn from(p: ThinkRewardParams) -> Self {
        Self {
            loc: p.loc,
            scale: p.scale,
            shape: p.shape,
        }
    }
}

/// Density at `token_count` divided by the normalizer.
pub fn think_efficiency_reward(token_count: usize, params: &ThinkRewardParams) -> f64 {
    let z = (token_count as f64 - params.loc) / params.scale;
    let density = 2.0 / params.scale * normal::pdf(z) * normal::cdf(params.shape * z);
    density / params.normalizer
}

/// Natural log of [`think_efficiency_reward`], finite for any token count.
pub fn think_efficiency_ln_reward(token_count: usize, params: &ThinkRewardParams) -> f64 {
    skew_normal_ln_density(token_count as f64, params.loc, params.scale, params.shape)
        .expect("params validated at construction")
        - params.normalizer.ln()
}

/// Splits thinking text into countable tokens.
pub trait TokenCounter {
    fn count_tokens(&self, text: &str) -> usize;
}

/// Whitespace-separated word count.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl TokenCounter for WhitespaceTokenizer {
    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

impl<F: Fn(&str) -> usize> TokenCounter for F {
    fn count_tokens(&self, text: &str) -> usize {
        self(text)
    }
}

/// Token counts for every think span in assistant turns, in order.
pub fn count_think_tokens(t: &Transcript, counter: &dyn TokenCounter) -> Vec<usize> {
    t.assistant_turns()
        .flat_map(|turn| turn.spans_of(TagKind::Think))
        .map(|span| counter.count_tokens(&span.inner_text))
        .collect()
}

/// Mean per-span reward; an episode without think spans scores as zero tokens.
pub fn aggregate_think_reward(span_tokens: &[usize], params: &ThinkRewardParams) -> f64 {
    if span_tokens.is_empty() {
        return think_efficiency_reward(0, params);
    }
    let total: f64 = span_tokens
        .iter()
        .map(|&n| think_efficiency_reward(n, params))
        .sum();
    total / span_tokens.len() as f64
}
