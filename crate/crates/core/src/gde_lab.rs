//! Simulated ensembles for checking that disagreement tracks test error.
//!
//! A task is a list of points, each with a confidence `q` in its top class
//! and the rest of the mass spread uniformly over the other classes. The
//! label of a point and every member's prediction are independent draws from
//! that distribution, so the ensemble is calibrated by construction and
//! expected pairwise disagreement equals expected error point by point. For
//! binary points both are `2q(1-q)`.
//!
//! The argmax control keeps the labels but makes every member predict the
//! top class: disagreement collapses to zero while error stays at `1 - q`.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kpe_metrics::ConfusionCounts;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskPoint {
    /// Probability of the top class, in `(0, 1]`.
    pub q: f64,
    pub n_classes: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedTask {
    pub points: Vec<TaskPoint>,
    pub rng_seed: u64,
}

impl CalibratedTask {
    /// `n_points` points cycling through `q_profile`.
    pub fn from_profile(
        q_profile: &[f64],
        n_points: usize,
        n_classes: u32,
        rng_seed: u64,
    ) -> Result<Self> {
        if q_profile.is_empty() {
            return Err(Error::Empty("q profile"));
        }
        let task = Self {
            points: (0..n_points)
                .map(|i| TaskPoint {
                    q: q_profile[i % q_profile.len()],
                    n_classes,
                })
                .collect(),
            rng_seed,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn uniform(q: f64, n_points: usize, n_classes: u32, rng_seed: u64) -> Result<Self> {
        Self::from_profile(&[q], n_points, n_classes, rng_seed)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !(p.q > 0.0 && p.q <= 1.0) {
                return Err(Error::Invalid(format!(
                    "point {i}: q = {} outside (0, 1]",
                    p.q
                )));
            }
            if p.n_classes < 2 {
                return Err(Error::Invalid(format!(
                    "point {i}: need at least 2 classes"
                )));
            }
        }
        Ok(())
    }

    /// The task with every point repeated `scale` times.
    pub fn scaled(&self, scale: usize) -> Self {
        Self {
            points: self
                .points
                .iter()
                .flat_map(|p| std::iter::repeat_n(*p, scale))
                .collect(),
            rng_seed: self.rng_seed,
        }
    }

    fn top_class(&self, i: usize) -> u32 {
        (i % self.points[i].n_classes as usize) as u32
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MemberSampling {
    /// Each member draws from the point's distribution.
    #[default]
    Calibrated,
    /// Each member predicts the top class (miscalibrated control).
    Argmax,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimulatedEnsemble {
    pub labels: Vec<u32>,
    pub members: Vec<Vec<u32>>,
    pub seed: u64,
}

fn draw(rng: &mut ChaCha8Rng, p: &TaskPoint, top: u32) -> u32 {
    if rng.gen::<f64>() < p.q {
        return top;
    }
    let other = rng.gen_range(0..p.n_classes - 1);
    if other >= top {
        other + 1
    } else {
        other
    }
}

pub fn simulate(task: &CalibratedTask, n_members: usize) -> Result<SimulatedEnsemble> {
    simulate_with(task, n_members, MemberSampling::Calibrated)
}

/// Draws labels first, then each member in turn, from one seeded stream.
pub fn simulate_with(
    task: &CalibratedTask,
    n_members: usize,
    sampling: MemberSampling,
) -> Result<SimulatedEnsemble> {
    task.validate()?;
    if n_members < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 members, got {n_members}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(task.rng_seed);
    let labels: Vec<u32> = task
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| draw(&mut rng, p, task.top_class(i)))
        .collect();
    let members = (0..n_members)
        .map(|_| {
            task.points
                .iter()
                .enumerate()
                .map(|(i, p)| match sampling {
                    MemberSampling::Calibrated => draw(&mut rng, p, task.top_class(i)),
                    MemberSampling::Argmax => task.top_class(i),
                })
                .collect()
        })
        .collect();
    Ok(SimulatedEnsemble {
        labels,
        members,
        seed: task.rng_seed,
    })
}

fn mismatch_rate(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty("no points"));
    }
    let diff = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.len() as f64)
}

/// Fraction of points where the prediction differs from the label.
pub fn empirical_error(predictions: &[u32], labels: &[u32]) -> Result<f64> {
    mismatch_rate(predictions, labels)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairwiseDisagreement {
    pub mean: f64,
    pub pair_count: usize,
}

/// Mean over all member pairs of the fraction of points where they differ.
pub fn empirical_disagreement(ensemble: &SimulatedEnsemble) -> Result<PairwiseDisagreement> {
    let m = &ensemble.members;
    if m.len() < 2 {
        return Err(Error::Invalid(
            "disagreement needs at least 2 members".into(),
        ));
    }
    let mut total = 0.0;
    let mut pair_count = 0;
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            total += mismatch_rate(&m[i], &m[j])?;
            pair_count += 1;
        }
    }
    Ok(PairwiseDisagreement {
        mean: total / pair_count as f64,
        pair_count,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GdeGap {
    pub n_points: usize,
    pub n_members: usize,
    pub pair_count: usize,
    pub mean_error: f64,
    pub mean_disagreement: f64,
    /// `|mean_error - mean_disagreement|`.
    pub gap: f64,
}

pub fn gde_gap(task: &CalibratedTask, n_members: usize, n_points_scale: usize) -> Result<GdeGap> {
    gde_gap_with(task, n_members, n_points_scale, MemberSampling::Calibrated)
}

pub fn gde_gap_with(
    task: &CalibratedTask,
    n_members: usize,
    n_points_scale: usize,
    sampling: MemberSampling,
) -> Result<GdeGap> {
    if n_points_scale == 0 {
        return Err(Error::Invalid("point scale must be at least 1".into()));
    }
    let scaled = task.scaled(n_points_scale);
    let ens = simulate_with(&scaled, n_members, sampling)?;
    let errors = ens
        .members
        .iter()
        .map(|m| empirical_error(m, &ens.labels))
        .collect::<Result<Vec<_>>>()?;
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
    let dis = empirical_disagreement(&ens)?;
    Ok(GdeGap {
        n_points: scaled.points.len(),
        n_members,
        pair_count: dis.pair_count,
        mean_error,
        mean_disagreement: dis.mean,
        gap: (mean_error - dis.mean).abs(),
    })
}

/// Sign of `a/b - c/d` for non-negative integers with positive denominators.
fn cmp_ratio(a: u64, b: u64, c: u64, d: u64) -> Ordering {
    (a as u128 * d as u128).cmp(&(c as u128 * b as u128))
}

fn f1_ratio(c: &ConfusionCounts) -> Option<(u64, u64)> {
    let den = 2 * c.tp + c.fp + c.fn_;
    (den > 0).then_some((2 * c.tp, den))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MoveOutcome {
    /// `None` when F1 is undefined on either side.
    pub f1: Option<Ordering>,
    pub accuracy: Ordering,
}

impl MoveOutcome {
    pub fn concordant(&self) -> bool {
        match self.f1 {
            None => true,
            Some(f) => !matches!(
                (f, self.accuracy),
                (Ordering::Greater, Ordering::Less) | (Ordering::Less, Ordering::Greater)
            ),
        }
    }
}

/// Compares F1 and accuracy before and after a change of counts, exactly.
pub fn compare_move(before: &ConfusionCounts, after: &ConfusionCounts) -> MoveOutcome {
    let f1 = match (f1_ratio(before), f1_ratio(after)) {
        (Some((a, b)), Some((c, d))) => Some(cmp_ratio(c, d, a, b)),
        _ => None,
    };
    let accuracy = cmp_ratio(
        after.tp + after.tn,
        after.total().max(1),
        before.tp + before.tn,
        before.total().max(1),
    );
    MoveOutcome { f1, accuracy }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConcordanceReport {
    pub max_total: u64,
    pub tuples: u64,
    pub moves_checked: u64,
    pub skipped_undefined_f1: u64,
    pub violations: Vec<(ConfusionCounts, ConfusionCounts)>,
}

type Move = fn(&ConfusionCounts) -> Option<ConfusionCounts>;

/// Single-count moves at fixed total: each turns one outcome into another.
const MOVES: [Move; 8] = [
    |c| (c.fp > 0).then(|| ConfusionCounts::new(c.tp + 1, c.tn, c.fp - 1, c.fn_)),
    |c| (c.fn_ > 0).then(|| ConfusionCounts::new(c.tp, c.tn + 1, c.fp, c.fn_ - 1)),
    |c| (c.fn_ > 0).then(|| ConfusionCounts::new(c.tp + 1, c.tn, c.fp, c.fn_ - 1)),
    |c| (c.fp > 0).then(|| ConfusionCounts::new(c.tp, c.tn + 1, c.fp - 1, c.fn_)),
    |c| (c.tp > 0).then(|| ConfusionCounts::new(c.tp - 1, c.tn, c.fp + 1, c.fn_)),
    |c| (c.tn > 0).then(|| ConfusionCounts::new(c.tp, c.tn - 1, c.fp, c.fn_ + 1)),
    |c| (c.tp > 0).then(|| ConfusionCounts::new(c.tp - 1, c.tn, c.fp, c.fn_ + 1)),
    |c| (c.tn > 0).then(|| ConfusionCounts::new(c.tp, c.tn - 1, c.fp + 1, c.fn_)),
];

/// Exhaustively checks every confusion tuple with `1 <= total <= max_total`:
/// no move that trades an error for a correct outcome (or back) may push F1
/// and accuracy in opposite directions.
pub fn f1_accuracy_concordance(max_total: u64) -> Result<ConcordanceReport> {
    if max_total < 4 {
        return Err(Error::Invalid("max_total must be at least 4".into()));
    }
    let mut report = ConcordanceReport {
        max_total,
        tuples: 0,
        moves_checked: 0,
        skipped_undefined_f1: 0,
        violations: Vec::new(),
    };
    for n in 1..=max_total {
        for tp in 0..=n {
            for tn in 0..=n - tp {
                for fp in 0..=n - tp - tn {
                    let before = ConfusionCounts::new(tp, tn, fp, n - tp - tn - fp);
                    report.tuples += 1;
                    for mv in MOVES {
                        let Some(after) = mv(&before) else { continue };
                        let out = compare_move(&before, &after);
                        report.moves_checked += 1;
                        if out.f1.is_none() {
                            report.skipped_undefined_f1 += 1;
                        }
                        if !out.concordant() {
                            report.violations.push((before, after));
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certain_task_agrees_everywhere() {
        let t = CalibratedTask::uniform(1.0, 500, 3, 5).unwrap();
        let e = simulate(&t, 4).unwrap();
        assert!(e.members.iter().all(|m| *m == e.labels));
        let g = gde_gap(&t, 4, 1).unwrap();
        assert_eq!((g.mean_error, g.mean_disagreement, g.gap), (0.0, 0.0, 0.0));
    }

    #[test]
    fn coin_flip_point_is_balanced() {
        let t = CalibratedTask::uniform(0.5, 1, 2, 0).unwrap();
        let draws = 20_000;
        let ones: usize = (0..draws)
            .map(|s| {
                let t = CalibratedTask {
                    rng_seed: s,
                    ..t.clone()
                };
                simulate(&t, 2).unwrap().labels[0] as usize
            })
            .sum();
        let freq = ones as f64 / draws as f64;
        // 4 sigma of a Binomial(20000, 0.5) frequency
        assert!(
            (freq - 0.5).abs() < 4.0 * (0.25f64 / draws as f64).sqrt(),
            "{freq}"
        );
    }

    #[test]
    fn seeded_runs_repeat() {
        let t = CalibratedTask::from_profile(&[0.6, 0.9], 1000, 3, 42).unwrap();
        assert_eq!(simulate(&t, 3).unwrap(), simulate(&t, 3).unwrap());
        let other = CalibratedTask {
            rng_seed: 43,
            ..t.clone()
        };
        assert_ne!(simulate(&t, 3).unwrap(), simulate(&other, 3).unwrap());
    }

    #[test]
    fn invalid_tasks() {
        assert!(CalibratedTask::uniform(0.0, 10, 2, 0).is_err());
        assert!(CalibratedTask::uniform(1.1, 10, 2, 0).is_err());
        assert!(CalibratedTask::uniform(0.5, 10, 1, 0).is_err());
        let t = CalibratedTask::uniform(0.5, 10, 2, 0).unwrap();
        assert!(simulate(&t, 1).is_err());
    }

    #[test]
    fn error_and_disagreement_basics() {
        assert_eq!(empirical_error(&[0, 1, 1], &[0, 1, 1]).unwrap(), 0.0);
        assert_eq!(empirical_error(&[1, 0, 0], &[0, 1, 1]).unwrap(), 1.0);
        assert!(empirical_error(&[1], &[0, 1]).is_err());

        let same = SimulatedEnsemble {
            labels: vec![0; 4],
            members: vec![vec![0, 1, 0, 1]; 3],
            seed: 0,
        };
        let d = empirical_disagreement(&same).unwrap();
        assert_eq!((d.mean, d.pair_count), (0.0, 3));

        let half = SimulatedEnsemble {
            labels: vec![0; 4],
            members: vec![vec![0, 0, 0, 0], vec![0, 0, 1, 1]],
            seed: 0,
        };
        assert_eq!(empirical_disagreement(&half).unwrap().mean, 0.5);

        let single = SimulatedEnsemble {
            labels: vec![0],
            members: vec![vec![0]],
            seed: 0,
        };
        assert!(empirical_disagreement(&single).is_err());
    }

    #[test]
    fn binary_rates_match_closed_form() {
        let t = CalibratedTask::uniform(0.9, 100_000, 2, 7).unwrap();
        let ens = simulate(&t, 4).unwrap();
        let expected = 2.0 * 0.9 * 0.1;
        let err = empirical_error(&ens.members[0], &ens.labels).unwrap();
        assert!((err - expected).abs() < 0.01, "{err}");
        let d = empirical_disagreement(&ens).unwrap();
        assert_eq!(d.pair_count, 6);
        assert!((d.mean - expected).abs() < 0.01, "{}", d.mean);
    }

    #[test]
    fn mixed_profile_gap_is_small() {
        let t = CalibratedTask::from_profile(&[0.6, 0.75, 0.9], 100_000, 2, 3).unwrap();
        let g = gde_gap(&t, 4, 1).unwrap();
        let expected = [0.6f64, 0.75, 0.9]
            .iter()
            .map(|q| 2.0 * q * (1.0 - q))
            .sum::<f64>()
            / 3.0;
        assert!(g.gap < 0.01, "{g:?}");
        assert!((g.mean_error - expected).abs() < 0.01);
    }

    #[test]
    fn argmax_control_breaks_equality() {
        let qs = [0.6f64, 0.75, 0.9];
        let t = CalibratedTask::from_profile(&qs, 30_000, 2, 9).unwrap();
        let g = gde_gap_with(&t, 4, 1, MemberSampling::Argmax).unwrap();
        let expected = qs.iter().map(|q| q.min(1.0 - q)).sum::<f64>() / 3.0;
        assert_eq!(g.mean_disagreement, 0.0);
        assert!((g.gap - expected).abs() < 0.01, "{g:?}");
    }

    #[test]
    fn scaling_repeats_points() {
        let t = CalibratedTask::from_profile(&[0.6, 0.9], 2, 2, 0).unwrap();
        let s = t.scaled(3);
        let qs: Vec<f64> = s.points.iter().map(|p| p.q).collect();
        assert_eq!(qs, [0.6, 0.6, 0.6, 0.9, 0.9, 0.9]);
        assert!(gde_gap(&t, 2, 0).is_err());
    }

    #[test]
    fn concordance_examples() {
        let before = ConfusionCounts::new(1, 1, 1, 1);
        let after = ConfusionCounts::new(2, 1, 0, 1);
        let out = compare_move(&before, &after);
        assert_eq!(out.f1, Some(Ordering::Greater));
        assert_eq!(out.accuracy, Ordering::Greater);
        let noop = compare_move(&before, &before);
        assert_eq!(
            (noop.f1, noop.accuracy),
            (Some(Ordering::Equal), Ordering::Equal)
        );

        let r = f1_accuracy_concordance(8).unwrap();
        assert!(r.violations.is_empty());
        // tuples with 1 <= n <= 8: sum of C(n+3, 3)
        let expected: u64 = (1..=8u64).map(|n| (n + 1) * (n + 2) * (n + 3) / 6).sum();
        assert_eq!(r.tuples, expected);
        assert!(f1_accuracy_concordance(3).is_err());
    }
}
