//! Per-round choice of what to refine: a similar fast/slow pair, an
//! incorrect fallback partner, or a single program.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Candidate, CandidateId, CandidatePool, Correctness, RunConfig};
use crate::similarity::{similarity, SimilarityConfig, SimilarityError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Paired,
    PairedIncorrectFallback,
    Solo,
}

impl Shape {
    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Paired => "paired",
            Shape::PairedIncorrectFallback => "paired_incorrect_fallback",
            Shape::Solo => "solo",
        }
    }
}

/// What one round refines for one task.
///
/// `reference` is p⁺ for rungs 1-3 and the solo target for rung 4.
/// `counterpart` is the partner for the two paired shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementInput {
    pub shape: Shape,
    /// Ladder rung, 1 to 4.
    pub rung: u8,
    pub reference: CandidateId,
    pub counterpart: Option<CandidateId>,
    /// Similarity between reference and counterpart, when paired.
    pub similarity: Option<f64>,
    /// |N(p⁺)|: correct candidates (p⁺ included) with similarity >= tau.
    pub neighborhood_size: usize,
    /// Correct candidates skipped for lack of similarity features.
    pub skipped_unfeaturized: Vec<CandidateId>,
}

impl RefinementInput {
    /// The program the provider is asked to rewrite.
    pub fn target(&self) -> CandidateId {
        match self.shape {
            Shape::Solo => self.reference,
            Shape::Paired | Shape::PairedIncorrectFallback => {
                self.counterpart.expect("paired shapes carry a counterpart")
            }
        }
    }

    /// The efficient exemplar shown alongside the target, if any.
    pub fn exemplar(&self) -> Option<CandidateId> {
        match self.shape {
            Shape::Solo => None,
            Shape::Paired | Shape::PairedIncorrectFallback => Some(self.reference),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PairingError {
    #[error("pool is empty")]
    EmptyPool,
}

/// Most efficient correct candidate.
pub fn select_reference(pool: &CandidatePool) -> Option<&Candidate> {
    pool.best_correct()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterpartSelection {
    pub counterpart: Option<(CandidateId, f64)>,
    pub neighborhood_size: usize,
    pub skipped_unfeaturized: Vec<CandidateId>,
}

/// Slowest correct candidate other than `p_plus` within similarity `tau`,
/// using `sim` to compare. Ties go to the lowest id.
pub fn select_counterpart_with<F>(pool: &CandidatePool, p_plus: &Candidate, tau: f64, sim: F) -> CounterpartSelection
where
    F: Fn(&Candidate, &Candidate) -> Result<f64, SimilarityError>,
{
    let mut best: Option<(f64, CandidateId, f64)> = None;
    let mut neighborhood = 1;
    let mut skipped = Vec::new();
    for q in pool.entries().iter().filter(|q| q.is_correct() && q.id() != p_plus.id()) {
        let s = match sim(p_plus, q) {
            Ok(s) => s,
            Err(_) => {
                skipped.push(q.id());
                continue;
            }
        };
        if s < tau {
            continue;
        }
        neighborhood += 1;
        let Some(e) = q.mean_elapsed() else { continue };
        if best.is_none_or(|(be, _, _)| e > be) {
            best = Some((e, q.id(), s));
        }
    }
    CounterpartSelection {
        counterpart: best.map(|(_, id, s)| (id, s)),
        neighborhood_size: neighborhood,
        skipped_unfeaturized: skipped,
    }
}

pub fn select_counterpart(pool: &CandidatePool, p_plus: &Candidate, cfg: &SimilarityConfig) -> CounterpartSelection {
    select_counterpart_with(pool, p_plus, cfg.tau, |a, b| similarity(a, b, cfg))
}

/// Applies the fallback ladder with a caller-supplied similarity.
///
/// 1. paired: p⁺ and a correct counterpart within tau.
/// 2. paired_incorrect_fallback: p⁺ and the most similar incorrect candidate.
/// 3. solo on p⁺.
/// 4. solo on the fastest measured entry (lowest-id entry if none is measured).
///
/// Rungs 1 and 2 apply only when `pairing` is on.
pub fn select_round_input_with<F>(
    pool: &CandidatePool,
    tau: f64,
    pairing: bool,
    sim: F,
) -> Result<RefinementInput, PairingError>
where
    F: Fn(&Candidate, &Candidate) -> Result<f64, SimilarityError>,
{
    if pool.is_empty() {
        return Err(PairingError::EmptyPool);
    }
    let Some(p_plus) = select_reference(pool) else {
        let target = pool
            .fastest_any()
            .or_else(|| pool.entries().iter().find(|c| c.correctness != Correctness::Error))
            .unwrap_or(&pool.entries()[0]);
        return Ok(RefinementInput {
            shape: Shape::Solo,
            rung: 4,
            reference: target.id(),
            counterpart: None,
            similarity: None,
            neighborhood_size: 0,
            skipped_unfeaturized: Vec::new(),
        });
    };
    let mut input = RefinementInput {
        shape: Shape::Solo,
        rung: 3,
        reference: p_plus.id(),
        counterpart: None,
        similarity: None,
        neighborhood_size: 1,
        skipped_unfeaturized: Vec::new(),
    };
    if !pairing {
        return Ok(input);
    }
    let sel = select_counterpart_with(pool, p_plus, tau, &sim);
    input.neighborhood_size = sel.neighborhood_size;
    input.skipped_unfeaturized = sel.skipped_unfeaturized;
    if let Some((id, s)) = sel.counterpart {
        input.shape = Shape::Paired;
        input.rung = 1;
        input.counterpart = Some(id);
        input.similarity = Some(s);
        return Ok(input);
    }
    let mut closest: Option<(f64, CandidateId)> = None;
    for q in pool.entries().iter().filter(|q| q.correctness == Correctness::Incorrect) {
        let Ok(s) = sim(p_plus, q) else { continue };
        if closest.is_none_or(|(bs, _)| s > bs) {
            closest = Some((s, q.id()));
        }
    }
    if let Some((s, id)) = closest {
        input.shape = Shape::PairedIncorrectFallback;
        input.rung = 2;
        input.counterpart = Some(id);
        input.similarity = Some(s);
    }
    Ok(input)
}

pub fn select_round_input(pool: &CandidatePool, cfg: &RunConfig) -> Result<RefinementInput, PairingError> {
    let sim_cfg = cfg.similarity();
    select_round_input_with(pool, cfg.tau, cfg.mode.uses_pairing(), |a, b| similarity(a, b, &sim_cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{ElapsedStats, RunSample};
    use crate::model::{Mode, Origin};
    use std::collections::HashMap;

    /// Pool of structurally distinct programs so none are AST duplicates.
    fn pool(specs: &[(Correctness, Option<f64>)]) -> CandidatePool {
        let mut p = CandidatePool::new("t");
        for (i, (c, e)) in specs.iter().enumerate() {
            let src = format!("def f(x):\n{}    return x\n", "    x = x + 1\n".repeat(i + 1));
            let mut cand = Candidate::new(src, 0, Origin::Generation, vec![]);
            cand.correctness = *c;
            cand.elapsed = e.map(|t| ElapsedStats::from_samples(vec![RunSample { elapsed_s: t, success: true }]));
            assert!(p.insert(cand).inserted_id().is_some());
        }
        p
    }

    fn table(pairs: &[((u64, u64), f64)]) -> impl Fn(&Candidate, &Candidate) -> Result<f64, SimilarityError> {
        let map: HashMap<(u64, u64), f64> =
            pairs.iter().flat_map(|&((a, b), s)| [((a, b), s), ((b, a), s)]).collect();
        move |p, q| Ok(*map.get(&(p.id(), q.id())).unwrap_or(&0.0))
    }

    use Correctness::{Correct, Incorrect};

    #[test]
    fn counterpart_filters_then_takes_slowest() {
        let p = pool(&[(Correct, Some(0.1)), (Correct, Some(0.4)), (Correct, Some(0.9)), (Correct, Some(0.6))]);
        let sim = table(&[((0, 1), 0.90), ((0, 2), 0.80), ((0, 3), 0.95)]);
        let sel = select_counterpart_with(&p, p.get(0).unwrap(), 0.85, sim);
        assert_eq!(sel.counterpart, Some((3, 0.95)));
        assert_eq!(sel.neighborhood_size, 3);
    }

    #[test]
    fn single_eligible_counterpart_wins_regardless_of_speed() {
        let p = pool(&[(Correct, Some(0.1)), (Correct, Some(0.1))]);
        let input = select_round_input_with(&p, 0.85, true, table(&[((0, 1), 0.9)])).unwrap();
        assert_eq!((input.shape, input.reference, input.counterpart), (Shape::Paired, 0, Some(1)));
    }

    #[test]
    fn fallback_to_closest_incorrect_without_threshold() {
        let p = pool(&[(Correct, Some(0.2)), (Incorrect, Some(0.1)), (Incorrect, Some(0.3))]);
        let input = select_round_input_with(&p, 0.85, true, table(&[((0, 1), 0.2), ((0, 2), 0.4)])).unwrap();
        assert_eq!(input.shape, Shape::PairedIncorrectFallback);
        assert_eq!(input.counterpart, Some(2));
        assert_eq!(input.target(), 2);
    }

    #[test]
    fn lone_correct_is_solo() {
        let p = pool(&[(Correct, Some(0.2))]);
        let input = select_round_input_with(&p, 0.85, true, table(&[])).unwrap();
        assert_eq!((input.shape, input.rung), (Shape::Solo, 3));
    }

    #[test]
    fn all_incorrect_targets_fastest() {
        let p = pool(&[(Incorrect, Some(0.2)), (Incorrect, Some(0.1))]);
        let input = select_round_input_with(&p, 0.85, true, table(&[])).unwrap();
        assert_eq!((input.shape, input.rung, input.reference), (Shape::Solo, 4, 1));
    }

    #[test]
    fn unmeasured_pool_targets_first_non_error() {
        let p = pool(&[(Correctness::Error, None), (Incorrect, None)]);
        let input = select_round_input_with(&p, 0.85, true, table(&[])).unwrap();
        assert_eq!(input.reference, 1);
    }

    #[test]
    fn empty_pool_errors() {
        let p = CandidatePool::new("t");
        assert_eq!(select_round_input_with(&p, 0.5, true, table(&[])), Err(PairingError::EmptyPool));
    }

    #[test]
    fn no_pairing_mode_skips_rungs_one_and_two() {
        let p = pool(&[(Correct, Some(0.1)), (Correct, Some(0.2))]);
        let input = select_round_input_with(&p, 0.0, false, table(&[((0, 1), 1.0)])).unwrap();
        assert_eq!(input.shape, Shape::Solo);
    }

    #[test]
    fn unfeaturized_correct_candidates_are_skipped() {
        let mut p = pool(&[(Correct, Some(0.1)), (Correct, Some(0.5))]);
        let cfg = RunConfig { mode: Mode::Effipair, ..RunConfig::default() };
        p.update(0, |c| c.embedding = None);
        let input = select_round_input(&p, &cfg).unwrap();
        assert_eq!(input.shape, Shape::Solo);
        assert_eq!(input.skipped_unfeaturized, vec![1]);
    }
}
