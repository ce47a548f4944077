//! Accuracy / FAR / FRR counting and decision-threshold search.

use std::fmt;

use crate::data::Encoded;
use crate::error::{Error, Result};
use crate::model::{Classifier, Scored};

/// Smallest representable threshold above 1: rejects every IND prediction.
pub const ABOVE_ONE: f64 = 1.0 + f64::EPSILON;

/// One scored utterance: raw decision, its confidence and the gold class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub predicted: usize,
    pub confidence: f64,
    pub gold: usize,
}

impl Outcome {
    /// Decision after threshold moving: a non-OOD prediction whose
    /// confidence is strictly below `t` becomes OOD.
    pub fn decide(&self, t: f64, ood_id: usize) -> usize {
        if self.predicted != ood_id && self.confidence < t {
            ood_id
        } else {
            self.predicted
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub total: usize,
    pub gold_ind: usize,
    pub gold_ood: usize,
    /// Correct decisions per gold class id, OOD last.
    pub correct: Vec<usize>,
    /// Gold-OOD utterances predicted as some IND class.
    pub accepted_ood: usize,
    /// Gold-IND utterances predicted as OOD.
    pub rejected_ind: usize,
    pub accuracy: f64,
    pub far: f64,
    pub frr: f64,
    pub threshold: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total={}", self.total)?;
        writeln!(f, "gold_ind={}", self.gold_ind)?;
        writeln!(f, "gold_ood={}", self.gold_ood)?;
        writeln!(f, "accuracy={:.6}", self.accuracy)?;
        writeln!(f, "far={:.6}", self.far)?;
        writeln!(f, "frr={:.6}", self.frr)?;
        writeln!(f, "threshold={:.6}", self.threshold)
    }
}

/// Count decisions at threshold `t`. `ood_id` is the OOD class id and the
/// number of classes is `ood_id + 1`. FAR (FRR) is reported as 0 when
/// there are no gold-OOD (gold-IND) utterances.
pub fn evaluate(outcomes: &[Outcome], ood_id: usize, t: f64) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::Input("cannot evaluate an empty dataset".into()));
    }
    if !(0.0..=ABOVE_ONE).contains(&t) {
        return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
    }
    let mut correct = vec![0; ood_id + 1];
    let (mut gold_ood, mut accepted_ood, mut rejected_ind) = (0, 0, 0);
    for o in outcomes {
        if o.gold > ood_id || o.predicted > ood_id {
            return Err(Error::Input(format!("class id out of range in {o:?}")));
        }
        let p = o.decide(t, ood_id);
        if p == o.gold {
            correct[o.gold] += 1;
        }
        if o.gold == ood_id {
            gold_ood += 1;
            if p != ood_id {
                accepted_ood += 1;
            }
        } else if p == ood_id {
            rejected_ind += 1;
        }
    }
    let total = outcomes.len();
    let gold_ind = total - gold_ood;
    Ok(EvalReport {
        total,
        gold_ind,
        gold_ood,
        accuracy: ratio(correct.iter().sum(), total),
        correct,
        accepted_ood,
        rejected_ind,
        far: ratio(accepted_ood, gold_ood),
        frr: ratio(rejected_ind, gold_ind),
        threshold: t,
    })
}

/// Smallest threshold from `{0} ∪ confidences ∪ {ABOVE_ONE}` whose FAR is
/// at most `target`. FAR is non-increasing in `t`, so one sorted sweep
/// over the falsely accepted OOD confidences suffices.
pub fn find_threshold(outcomes: &[Outcome], ood_id: usize, target: f64) -> Result<f64> {
    let gold_ood = outcomes.iter().filter(|o| o.gold == ood_id).count();
    if gold_ood == 0 {
        return Err(Error::Input("threshold search needs at least one gold-OOD utterance".into()));
    }
    let mut accepted: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.gold == ood_id && o.predicted != ood_id)
        .map(|o| o.confidence)
        .collect();
    accepted.sort_by(f64::total_cmp);
    // Largest number of false accepts that still satisfices.
    let allowed = (0..=accepted.len())
        .rev()
        .find(|&k| ratio(k, gold_ood) <= target)
        .unwrap_or(0);
    if accepted.len() <= allowed {
        return Ok(0.0);
    }
    // Every accepted confidence up to this one must be rejected.
    let must_reject = accepted[accepted.len() - allowed - 1];
    Ok(outcomes
        .iter()
        .map(|o| o.confidence)
        .filter(|&c| c > must_reject)
        .fold(ABOVE_ONE, f64::min))
}

/// Raw decisions of `model` on every utterance.
pub fn score_all(model: &Classifier, data: &[Encoded]) -> Result<Vec<Outcome>> {
    data.iter()
        .map(|e| {
            let Scored { predicted, confidence } = model.score(e)?;
            Ok(Outcome {
                predicted,
                confidence,
                gold: e.label,
            })
        })
        .collect()
}
