//! Hotspot summaries, the paired contrast signal, and Amdahl ranking.

mod backend;

pub use backend::{
    parse_profile_stream, profile_candidate, repetitions_for, to_wire, FakeProfiler, ProfileError,
    ProfileRequest, ProfileStream, ProfilerBackend, ShimProfiler, PROFILE_TARGET_S,
    SAMPLING_INTERVAL_S,
};

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::CANDIDATE_FILE;
use crate::model::{Candidate, CandidateId};
use crate::similarity::code_tokens;

/// Lines above this CPU share (percent, exclusive) are hotspots.
pub const CPU_THRESHOLD_PERCENT: f64 = 1.0;
/// Lines with at least this many allocations are hotspots.
pub const ALLOC_THRESHOLD: u64 = 100;
/// Minimum excerpt token-set Jaccard for two hotspots to count as the same site.
pub const MATCH_JACCARD: f64 = 0.6;

const EXCERPT_CHARS: usize = 160;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub file: String,
    pub line: u32,
    pub cpu_percent: f64,
    pub alloc_count: u64,
    #[serde(default)]
    pub peak_mem_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawProfile {
    pub lines: Vec<LineRecord>,
    pub total_profiled_s: f64,
    pub repetitions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub file: String,
    pub line: u32,
    pub excerpt: String,
    pub cpu_percent: f64,
    pub alloc_count: u64,
    pub peak_mem_bytes: Option<u64>,
}

impl Hotspot {
    fn location(&self) -> String {
        if self.file == CANDIDATE_FILE {
            format!("line {}", self.line)
        } else {
            format!("{}:{}", self.file, self.line)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub hotspots: Vec<Hotspot>,
    /// CPU share not covered by any hotspot, floored at 0.
    pub omitted_mass: f64,
    pub total_profiled_s: f64,
    pub repetitions: u32,
}

pub fn is_hotspot(cpu_percent: f64, alloc_count: u64) -> bool {
    cpu_percent > CPU_THRESHOLD_PERCENT || alloc_count >= ALLOC_THRESHOLD
}

fn excerpt(source: &str, file: &str, line: u32) -> String {
    if file != CANDIDATE_FILE || line == 0 {
        return String::new();
    }
    let text = source.lines().nth(line as usize - 1).unwrap_or("").trim();
    match text.char_indices().nth(EXCERPT_CHARS) {
        Some((idx, _)) => format!("{}...", &text[..idx]),
        None => text.to_string(),
    }
}

/// Keeps exactly the lines passing either threshold, sorted by CPU share
/// (descending, ties by file then line). Excerpts come from `source`.
pub fn summarize(raw: &RawProfile, source: &str) -> ProfileSummary {
    let mut hotspots: Vec<Hotspot> = raw
        .lines
        .iter()
        .filter(|r| is_hotspot(r.cpu_percent, r.alloc_count))
        .map(|r| Hotspot {
            file: r.file.clone(),
            line: r.line,
            excerpt: excerpt(source, &r.file, r.line),
            cpu_percent: r.cpu_percent,
            alloc_count: r.alloc_count,
            peak_mem_bytes: r.peak_mem_bytes,
        })
        .collect();
    hotspots.sort_by(|a, b| {
        b.cpu_percent
            .total_cmp(&a.cpu_percent)
            .then_with(|| a.file.cmp(&b.file))
            .then(a.line.cmp(&b.line))
    });
    let covered: f64 = hotspots.iter().map(|h| h.cpu_percent).sum();
    ProfileSummary {
        hotspots,
        omitted_mass: (100.0 - covered).max(0.0),
        total_profiled_s: raw.total_profiled_s,
        repetitions: raw.repetitions,
    }
}

fn fmt_mem(bytes: Option<u64>) -> String {
    match bytes {
        None => "unknown".to_string(),
        Some(b) if b >= 1 << 20 => format!("{:.1} MiB", b as f64 / f64::from(1u32 << 20)),
        Some(b) if b >= 1 << 10 => format!("{:.1} KiB", b as f64 / 1024.0),
        Some(b) => format!("{b} B"),
    }
}

fn hotspot_line(h: &Hotspot, amdahl_k: f64) -> String {
    let gain = amdahl_bound((h.cpu_percent / 100.0).clamp(0.0, 1.0), amdahl_k)
        .map(|a| a.global_speedup)
        .unwrap_or(1.0);
    format!(
        "- {}: {:.1}% CPU, {} allocs, peak mem {}, up to {:.2}x overall if {}x faster | {}\n",
        h.location(),
        h.cpu_percent,
        h.alloc_count,
        fmt_mem(h.peak_mem_bytes),
        gain,
        amdahl_k,
        h.excerpt
    )
}

fn truncate_bytes(mut s: String, budget: usize) -> String {
    if s.len() > budget {
        let mut cut = budget;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
    }
    s
}

/// Fits `head` + as many leading `items` as possible + `tail(dropped)` into `budget` bytes.
fn fit(head: &str, items: &[String], tail: impl Fn(usize) -> String, budget: usize) -> String {
    let mut keep = items.len();
    loop {
        let mut out = String::from(head);
        items[..keep].iter().for_each(|l| out.push_str(l));
        out.push_str(&tail(items.len() - keep));
        if out.len() <= budget || keep == 0 {
            return truncate_bytes(out, budget);
        }
        keep -= 1;
    }
}

/// Prompt text for one summary, never longer than `budget` bytes.
/// Lowest-share hotspots are dropped first when space runs out.
pub fn render_summary(summary: &ProfileSummary, budget: usize, amdahl_k: f64) -> String {
    let head = format!(
        "Profiled {:.3}s over {} repetition(s). Hotspots by CPU share:\n",
        summary.total_profiled_s, summary.repetitions
    );
    let items: Vec<String> = summary.hotspots.iter().map(|h| hotspot_line(h, amdahl_k)).collect();
    let omitted = summary.omitted_mass;
    fit(
        &head,
        &items,
        |dropped| {
            let mut t = String::new();
            if dropped > 0 {
                let _ = writeln!(t, "({dropped} lower-share hotspots omitted)");
            }
            let _ = writeln!(t, "Remaining lines: {omitted:.1}% CPU");
            t
        },
        budget,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedHotspot {
    pub reference: Hotspot,
    pub counterpart: Hotspot,
    /// Counterpart share minus reference share, in percentage points.
    pub cpu_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSignal {
    pub reference_id: CandidateId,
    pub counterpart_id: CandidateId,
    pub reference_elapsed_s: f64,
    pub counterpart_elapsed_s: f64,
    /// `e(counterpart) - e(reference)`, never negative.
    pub delta_s: f64,
    /// `e(counterpart) / e(reference)`; absent when the reference time is zero.
    pub ratio: Option<f64>,
    pub counterpart_only: Vec<Hotspot>,
    pub shared: Vec<SharedHotspot>,
    pub reference_summary: ProfileSummary,
    pub counterpart_summary: ProfileSummary,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContrastError {
    #[error("candidate {0} has no profile summary")]
    MissingProfile(CandidateId),
    #[error("candidate {0} has no measured elapsed time")]
    MissingElapsed(CandidateId),
    #[error("counterpart {counterpart} ({counterpart_s}s) is faster than reference {reference} ({reference_s}s)")]
    PreconditionViolated { reference: CandidateId, counterpart: CandidateId, reference_s: f64, counterpart_s: f64 },
}

fn token_set(text: &str) -> BTreeSet<String> {
    code_tokens(text).into_iter().map(str::to_string).collect()
}

/// Token-set Jaccard of two excerpts; `None` when both are empty.
pub fn excerpt_jaccard(a: &str, b: &str) -> Option<f64> {
    let (ta, tb) = (token_set(a), token_set(b));
    if ta.is_empty() && tb.is_empty() {
        return None;
    }
    let inter = ta.intersection(&tb).count() as f64;
    let union = ta.union(&tb).count() as f64;
    Some(inter / union)
}

fn same_site(a: &Hotspot, b: &Hotspot) -> Option<f64> {
    match excerpt_jaccard(&a.excerpt, &b.excerpt) {
        Some(j) => (j >= MATCH_JACCARD).then_some(j),
        None => (a.file == b.file && a.line == b.line).then_some(1.0),
    }
}

/// Builds the paired contrast between reference `p_plus` and slower `p_minus`.
pub fn contrast(p_plus: &Candidate, p_minus: &Candidate) -> Result<ContrastSignal, ContrastError> {
    let e_plus = p_plus.mean_elapsed().ok_or(ContrastError::MissingElapsed(p_plus.id()))?;
    let e_minus = p_minus.mean_elapsed().ok_or(ContrastError::MissingElapsed(p_minus.id()))?;
    if e_minus < e_plus {
        return Err(ContrastError::PreconditionViolated {
            reference: p_plus.id(),
            counterpart: p_minus.id(),
            reference_s: e_plus,
            counterpart_s: e_minus,
        });
    }
    let ref_summary = p_plus.profile.as_ref().ok_or(ContrastError::MissingProfile(p_plus.id()))?;
    let cp_summary = p_minus.profile.as_ref().ok_or(ContrastError::MissingProfile(p_minus.id()))?;

    let mut counterpart_only = Vec::new();
    let mut shared = Vec::new();
    for h in &cp_summary.hotspots {
        let best = ref_summary
            .hotspots
            .iter()
            .filter_map(|r| same_site(h, r).map(|j| (j, r)))
            .max_by(|(ja, _), (jb, _)| ja.total_cmp(jb));
        match best {
            Some((_, r)) => shared.push(SharedHotspot {
                reference: r.clone(),
                counterpart: h.clone(),
                cpu_delta: h.cpu_percent - r.cpu_percent,
            }),
            None => counterpart_only.push(h.clone()),
        }
    }
    let ratio = if e_plus > 0.0 {
        Some(e_minus / e_plus)
    } else if e_minus == 0.0 {
        Some(1.0)
    } else {
        None
    };
    Ok(ContrastSignal {
        reference_id: p_plus.id(),
        counterpart_id: p_minus.id(),
        reference_elapsed_s: e_plus,
        counterpart_elapsed_s: e_minus,
        delta_s: e_minus - e_plus,
        ratio,
        counterpart_only,
        shared,
        reference_summary: ref_summary.clone(),
        counterpart_summary: cp_summary.clone(),
    })
}

/// Prompt guidance text for a contrast, never longer than `budget` bytes.
/// Candidate A is the counterpart being improved, Candidate B the reference.
pub fn render_contrast(signal: &ContrastSignal, budget: usize, amdahl_k: f64) -> String {
    let ratio = match signal.ratio {
        Some(r) => format!("{r:.2}x"),
        None => "unbounded".to_string(),
    };
    let mut head = format!(
        "Candidate A averages {:.6}s and Candidate B averages {:.6}s ({} the time of B, {:+.6}s).\n",
        signal.counterpart_elapsed_s, signal.reference_elapsed_s, ratio, signal.delta_s
    );
    let mut items = Vec::new();
    if !signal.counterpart_only.is_empty() {
        head.push_str("Hotspots in Candidate A with no counterpart in Candidate B:\n");
        items.extend(signal.counterpart_only.iter().map(|h| hotspot_line(h, amdahl_k)));
    }
    let shared: Vec<String> = signal
        .shared
        .iter()
        .map(|s| {
            format!(
                "- shared site, A {:.1}% vs B {:.1}% CPU ({:+.1} pts) | A: {} | B: {}\n",
                s.counterpart.cpu_percent, s.reference.cpu_percent, s.cpu_delta, s.counterpart.excerpt, s.reference.excerpt
            )
        })
        .collect();
    let shared_header_at = items.len();
    items.extend(shared);
    // The shared-site header is emitted inline with the first shared entry.
    if shared_header_at < items.len() {
        items[shared_header_at] = format!("Hotspots present in both:\n{}", items[shared_header_at]);
    }
    fit(
        &head,
        &items,
        |dropped| if dropped > 0 { format!("({dropped} lower-priority entries omitted)\n") } else { String::new() },
        budget,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmdahlEstimate {
    pub fraction_p: f64,
    pub local_speedup_k: f64,
    pub global_speedup: f64,
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("amdahl bound needs 0 <= p <= 1 and k > 0 (got p={p}, k={k})")]
pub struct DomainError {
    pub p: f64,
    pub k: f64,
}

/// Global speedup `1 / ((1 - p) + p / k)` when a fraction `p` of the runtime
/// becomes `k` times faster.
pub fn amdahl_bound(fraction_p: f64, local_speedup_k: f64) -> Result<AmdahlEstimate, DomainError> {
    if !(0.0..=1.0).contains(&fraction_p) || !(local_speedup_k > 0.0) || !local_speedup_k.is_finite() {
        return Err(DomainError { p: fraction_p, k: local_speedup_k });
    }
    Ok(AmdahlEstimate {
        fraction_p,
        local_speedup_k,
        global_speedup: 1.0 / ((1.0 - fraction_p) + fraction_p / local_speedup_k),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{ElapsedStats, RunSample};
    use crate::model::Origin;
    use proptest::prelude::*;

    fn rec(line: u32, cpu: f64, allocs: u64) -> LineRecord {
        LineRecord { file: CANDIDATE_FILE.into(), line, cpu_percent: cpu, alloc_count: allocs, peak_mem_bytes: None }
    }

    fn raw(lines: Vec<LineRecord>) -> RawProfile {
        RawProfile { lines, total_profiled_s: 1.2, repetitions: 4 }
    }

    fn hs(line: u32, excerpt: &str, cpu: f64) -> Hotspot {
        Hotspot { file: CANDIDATE_FILE.into(), line, excerpt: excerpt.into(), cpu_percent: cpu, alloc_count: 0, peak_mem_bytes: None }
    }

    fn profiled(id_hint: &str, mean: f64, hotspots: Vec<Hotspot>) -> Candidate {
        let mut c = Candidate::new(id_hint, 0, Origin::Generation, vec![]);
        c.elapsed = Some(ElapsedStats::from_samples(vec![RunSample { elapsed_s: mean, success: true }]));
        let covered: f64 = hotspots.iter().map(|h| h.cpu_percent).sum();
        c.profile = Some(ProfileSummary { hotspots, omitted_mass: 100.0 - covered, total_profiled_s: 1.0, repetitions: 1 });
        c
    }

    #[test]
    fn threshold_boundaries() {
        let s = summarize(&raw(vec![rec(1, 5.2, 3), rec(2, 0.4, 150), rec(3, 0.9, 99), rec(4, 1.0, 0), rec(5, 0.0, 100)]), "");
        let lines: Vec<u32> = s.hotspots.iter().map(|h| h.line).collect();
        assert_eq!(lines, vec![1, 2, 5]);
        assert!((s.omitted_mass - (100.0 - 5.6)).abs() < 1e-9);
    }

    #[test]
    fn excerpts_come_from_source() {
        let src = "def f(xs):\n    return sorted(xs)\n";
        let s = summarize(&raw(vec![rec(2, 90.0, 0)]), src);
        assert_eq!(s.hotspots[0].excerpt, "return sorted(xs)");
    }

    #[test]
    fn render_respects_budget_and_drops_lowest_first() {
        let lines: Vec<LineRecord> = (1..=60).map(|i| rec(i, 1.5 + f64::from(i), 200)).collect();
        let src: String = (1..=60).map(|i| format!("x{i} = [0] * {i}\n")).collect();
        let s = summarize(&raw(lines), &src);
        let full = render_summary(&s, usize::MAX, 10.0);
        let small = render_summary(&s, 1024, 10.0);
        assert!(small.len() <= 1024);
        assert!(full.len() > 1024);
        assert!(small.contains("line 60:"), "highest share kept");
        assert!(!small.contains("line 1:"), "lowest share dropped");
        assert!(small.contains("lower-share hotspots omitted"));
    }

    #[test]
    fn absent_memory_renders_unknown() {
        let s = summarize(&raw(vec![rec(1, 50.0, 0)]), "x = 1\n");
        assert!(render_summary(&s, 4096, 10.0).contains("peak mem unknown"));
    }

    #[test]
    fn counterpart_only_hotspot_is_reported() {
        let plus = profiled("a = 1", 0.1, vec![hs(2, "return sorted(xs)", 80.0)]);
        let minus = profiled(
            "b = 2",
            0.5,
            vec![hs(4, "for j in range(i + 1, n): if xs[j] < xs[i]: swap", 60.0), hs(6, "return sorted(xs)", 20.0)],
        );
        let c = contrast(&plus, &minus).unwrap();
        assert_eq!(c.counterpart_only.len(), 1);
        assert_eq!(c.counterpart_only[0].cpu_percent, 60.0);
        assert_eq!(c.shared.len(), 1);
        assert!((c.shared[0].cpu_delta + 60.0).abs() < 1e-12);
        assert!((c.ratio.unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn self_contrast_is_empty_with_unit_ratio() {
        let a = profiled("a = 1", 0.2, vec![hs(1, "total += x", 70.0)]);
        let c = contrast(&a, &a).unwrap();
        assert!(c.counterpart_only.is_empty());
        assert_eq!(c.ratio, Some(1.0));
        assert_eq!(c.delta_s, 0.0);
    }

    #[test]
    fn contrast_is_asymmetric() {
        let fast = profiled("a = 1", 0.1, vec![]);
        let slow = profiled("b = 1", 0.3, vec![]);
        let c = contrast(&fast, &slow).unwrap();
        assert!(c.counterpart_only.is_empty());
        assert!((c.delta_s - 0.2).abs() < 1e-12);
        assert!(matches!(contrast(&slow, &fast), Err(ContrastError::PreconditionViolated { .. })));
    }

    #[test]
    fn empty_excerpts_match_by_location_only() {
        let mut a = hs(3, "", 10.0);
        a.file = "lib.py".into();
        let b = a.clone();
        let mut c = a.clone();
        c.line = 4;
        assert!(same_site(&a, &b).is_some());
        assert!(same_site(&a, &c).is_none());
    }

    #[test]
    fn contrast_render_fits_budget() {
        let many: Vec<Hotspot> = (0..200).map(|i| hs(i, &format!("v{i} = compute_{i}(data)"), 0.5)).collect();
        let plus = profiled("a = 1", 0.1, vec![]);
        let minus = profiled("b = 1", 0.4, many);
        let c = contrast(&plus, &minus).unwrap();
        let text = render_contrast(&c, 2048, 10.0);
        assert!(text.len() <= 2048);
        assert!(text.starts_with("Candidate A averages"));
    }

    #[test]
    fn amdahl_values() {
        assert!((amdahl_bound(0.5, 2.0).unwrap().global_speedup - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(amdahl_bound(0.0, 7.0).unwrap().global_speedup, 1.0);
        assert!((amdahl_bound(1.0, 10.0).unwrap().global_speedup - 10.0).abs() < 1e-12);
        assert!(amdahl_bound(1.5, 2.0).is_err());
        assert!(amdahl_bound(0.5, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn summarize_matches_filter(
            recs in prop::collection::vec((0.0f64..5.0, 0u64..300), 0..40)
        ) {
            let lines: Vec<LineRecord> =
                recs.iter().enumerate().map(|(i, (c, a))| rec(i as u32 + 1, *c, *a)).collect();
            let s = summarize(&raw(lines), "");
            let mut got: Vec<u32> = s.hotspots.iter().map(|h| h.line).collect();
            got.sort_unstable();
            let want: Vec<u32> = recs
                .iter()
                .enumerate()
                .filter(|(_, (c, a))| *c > 1.0 || *a >= 100)
                .map(|(i, _)| i as u32 + 1)
                .collect();
            prop_assert_eq!(got, want);
            prop_assert!(s.hotspots.windows(2).all(|w| w[0].cpu_percent >= w[1].cpu_percent));
        }

        #[test]
        fn amdahl_monotone(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, k1 in 1.0f64..100.0, k2 in 1.0f64..100.0) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let s = |p, k| amdahl_bound(p, k).unwrap().global_speedup;
            prop_assert!(s(lo, k1) <= s(hi, k1) + 1e-12);
            let (klo, khi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            prop_assert!(s(p1, klo) <= s(p1, khi) + 1e-12);
        }
    }
}
