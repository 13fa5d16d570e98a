//! Alignment-quality metrics on held-out pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::dtw::align;
use crate::error::{Error, Result};
use crate::sequence::{l2_normalize, FeatureSequence};

/// Nearest neighbour in `v` (by cosine similarity) of every timestep of `u`. Ties go to the lowest index.
pub fn nearest_neighbors(u: &FeatureSequence, v: &FeatureSequence) -> Result<Vec<usize>> {
    if u.dim() != v.dim() {
        return Err(Error::invalid(format!(
            "embedding dimension mismatch: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let un = l2_normalize(u)?;
    let vn = l2_normalize(v)?;
    let sim = un.data().t().dot(vn.data());
    Ok(sim
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &s) in row.iter().enumerate() {
                if s > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Kendall's tau of an index assignment against the identity order. Tied targets count as neither.
pub fn tau_from_assignment(assign: &[usize]) -> Result<f64> {
    let m = assign.len();
    if m < 2 {
        return Err(Error::invalid("Kendall's tau needs at least two frames"));
    }
    let mut score: i64 = 0;
    for i in 0..m {
        for k in i + 1..m {
            score += match assign[k].cmp(&assign[i]) {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
            };
        }
    }
    Ok(score as f64 / (m * (m - 1) / 2) as f64)
}

/// Temporal-order agreement of nearest-neighbour matches from `u` into `v`.
pub fn kendalls_tau(u: &FeatureSequence, v: &FeatureSequence) -> Result<f64> {
    if u.len() < 2 || v.len() < 2 {
        return Err(Error::invalid("Kendall's tau needs sequences of length >= 2"));
    }
    tau_from_assignment(&nearest_neighbors(u, v)?)
}

/// Mean canonical-time gap between each frame of `u` and the frames of `v` the
/// inference-time hard alignment matches it with.
pub fn alignment_error(
    u: &FeatureSequence,
    v: &FeatureSequence,
    u_times: &[f64],
    v_times: &[f64],
    beta: f64,
) -> Result<f64> {
    if u_times.len() != u.len() || v_times.len() != v.len() {
        return Err(Error::invalid("ground truth does not cover both sequences"));
    }
    let un = l2_normalize(u)?;
    let vn = l2_normalize(v)?;
    let path = align(&un, &vn, beta)?;
    let mut sum = vec![0.0; u.len()];
    let mut count = vec![0usize; u.len()];
    for &(i, j) in &path.steps {
        sum[i - 1] += v_times[j - 1];
        count[i - 1] += 1;
    }
    let total: f64 = (0..u.len())
        .map(|i| (sum[i] / count[i] as f64 - u_times[i]).abs())
        .sum();
    Ok(total / u.len() as f64)
}

/// A labeled set of embedded frames.
pub struct LabeledFrames<'a> {
    pub embedding: &'a FeatureSequence,
    pub labels: &'a [usize],
}

/// Per-frame correctness of 1-nearest-neighbour phase classification.
pub fn phase_predictions_correct(train: &[LabeledFrames<'_>], test: &LabeledFrames<'_>) -> Result<Vec<bool>> {
    if train.is_empty() || train.iter().all(|t| t.labels.is_empty()) || test.labels.is_empty() {
        return Err(Error::invalid("phase classification needs non-empty train and test sets"));
    }
    let mut known = std::collections::BTreeSet::new();
    for t in train {
        if t.labels.len() != t.embedding.len() {
            return Err(Error::invalid("train labels do not match frames"));
        }
        known.extend(t.labels.iter().copied());
    }
    if test.labels.len() != test.embedding.len() {
        return Err(Error::invalid("test labels do not match frames"));
    }
    if let Some(missing) = test.labels.iter().find(|l| !known.contains(l)) {
        return Err(Error::invalid(format!("no training frame carries phase {missing}")));
    }
    let q = l2_normalize(test.embedding)?;
    let mut best = vec![(f64::NEG_INFINITY, 0usize); q.len()];
    for t in train {
        let r = l2_normalize(t.embedding)?;
        if r.dim() != q.dim() {
            return Err(Error::invalid("embedding dimension mismatch"));
        }
        let sim = q.data().t().dot(r.data());
        for (b, row) in best.iter_mut().zip(sim.rows()) {
            for (&s, &lab) in row.iter().zip(t.labels) {
                if s > b.0 {
                    *b = (s, lab);
                }
            }
        }
    }
    Ok(best
        .iter()
        .zip(test.labels)
        .map(|(&(_, pred), &truth)| pred == truth)
        .collect())
}

/// Fraction of test frames whose 1-NN (cosine) training frame carries the same phase.
pub fn phase_accuracy(train: &[LabeledFrames<'_>], test: &[LabeledFrames<'_>]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for t in test {
        let c = phase_predictions_correct(train, t)?;
        hit += c.iter().filter(|&&b| b).count();
        total += c.len();
    }
    Ok(hit as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub a: String,
    pub b: String,
    pub kendalls_tau: f64,
    pub alignment_error: f64,
    pub phase_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kendalls_tau: f64,
    pub mean_alignment_error: f64,
    pub phase_accuracy: f64,
    pub pairs: Vec<PairReport>,
}

impl EvalReport {
    /// Aggregate per-pair values by their mean.
    pub fn from_pairs(pairs: Vec<PairReport>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("no evaluation pairs"));
        }
        let n = pairs.len() as f64;
        let mean = |f: fn(&PairReport) -> f64| pairs.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            kendalls_tau: mean(|p| p.kendalls_tau),
            mean_alignment_error: mean(|p| p.alignment_error),
            phase_accuracy: mean(|p| p.phase_accuracy),
            pairs,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<report>".into(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Score every held-out pair of `split` under the embedding produced by `embed`.
///
/// Phase labels are classified against the training sequences of the same
/// process, since label values are only meaningful within one process.
/// A pair's phase accuracy pools the frames of both of its sequences.
pub fn evaluate_split<F>(ds: &Dataset, split: &Split, beta: f64, embed: F) -> Result<EvalReport>
where
    F: Fn(usize) -> Result<FeatureSequence> + Sync,
{
    let pairs = split.heldout_pairs();
    if pairs.is_empty() {
        return Err(Error::invalid("split has no held-out pairs"));
    }
    let mut needed: Vec<usize> = split.heldout.iter().flatten().copied().collect();
    needed.extend(split.train_indices());
    needed.sort_unstable();
    needed.dedup();
    let embedded: Vec<(usize, FeatureSequence)> = needed
        .par_iter()
        .map(|&i| embed(i).map(|e| (i, e)))
        .collect::<Result<_>>()?;
    let lookup: std::collections::HashMap<usize, &FeatureSequence> =
        embedded.iter().map(|(i, e)| (*i, e)).collect();

    let heldout: Vec<usize> = split.heldout.iter().flatten().copied().collect();
    let correct: std::collections::HashMap<usize, Vec<bool>> = heldout
        .par_iter()
        .map(|&i| {
            let p = ds.sequences[i].process;
            let train: Vec<LabeledFrames<'_>> = split.train[p]
                .iter()
                .map(|&t| LabeledFrames {
                    embedding: lookup[&t],
                    labels: &ds.sequences[t].phase_labels,
                })
                .collect();
            let test = LabeledFrames {
                embedding: lookup[&i],
                labels: &ds.sequences[i].phase_labels,
            };
            phase_predictions_correct(&train, &test).map(|c| (i, c))
        })
        .collect::<Result<_>>()?;

    let reports = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ea, eb) = (lookup[&a], lookup[&b]);
            let (ra, rb) = (&ds.sequences[a], &ds.sequences[b]);
            let hits = correct[&a].iter().chain(&correct[&b]).filter(|&&c| c).count();
            let frames = correct[&a].len() + correct[&b].len();
            Ok(PairReport {
                a: ra.name.clone(),
                b: rb.name.clone(),
                kendalls_tau: kendalls_tau(ea, eb)?,
                alignment_error: alignment_error(
                    ea,
                    eb,
                    &ra.canonical_times(),
                    &rb.canonical_times(),
                    beta,
                )?,
                phase_accuracy: hits as f64 / frames as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_pairs(reports)
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_seq(rng: &mut ChaCha8Rng, d: usize, m: usize) -> FeatureSequence {
        let s = FeatureSequence::new(Array2::from_shape_fn((d, m), |_| rng.random_range(-1.0..1.0)))
            .unwrap();
        l2_normalize(&s).unwrap()
    }

    #[test]
    fn self_and_reversed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_seq(&mut rng, 8, 30);
        assert_eq!(kendalls_tau(&u, &u).unwrap(), 1.0);
        let rev: Vec<usize> = (0..30).rev().collect();
        let v = u.select(&rev).unwrap();
        assert_eq!(kendalls_tau(&u, &v).unwrap(), -1.0);
    }

    #[test]
    fn tau_ties_count_as_neither() {
        assert_eq!(tau_from_assignment(&[0, 0, 0]).unwrap(), 0.0);
        assert!((tau_from_assignment(&[0, 0, 1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(tau_from_assignment(&[3]).is_err());
    }

    #[test]
    fn tau_invariant_to_monotone_relabeling() {
        let assign = [2, 0, 5, 5, 3, 7, 1];
        let relabeled: Vec<usize> = assign.iter().map(|&a| 3 * a * a + 10).collect();
        assert_eq!(tau_from_assignment(&assign).unwrap(), tau_from_assignment(&relabeled).unwrap());
    }

    #[test]
    fn self_phase_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = random_seq(&mut rng, 6, 20);
        let labels: Vec<usize> = (0..20).map(|i| i / 5).collect();
        let f = LabeledFrames {
            embedding: &e,
            labels: &labels,
        };
        let acc = phase_accuracy(std::slice::from_ref(&f), std::slice::from_ref(&f)).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn missing_phase_in_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = random_seq(&mut rng, 3, 4);
        let tr = LabeledFrames {
            embedding: &e,
            labels: &[0, 0, 1, 1],
        };
        let te = LabeledFrames {
            embedding: &e,
            labels: &[0, 1, 2, 2],
        };
        assert!(phase_accuracy(&[tr], &[te]).is_err());
    }

    #[test]
    fn identical_sequences_align_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_seq(&mut rng, 8, 25);
        let t: Vec<f64> = (0..25).map(|i| i as f64 / 24.0).collect();
        assert_eq!(alignment_error(&u, &u, &t, &t, 0.1).unwrap(), 0.0);
        assert!(alignment_error(&u, &u, &t[1..], &t, 0.1).is_err());
    }

    #[test]
    fn report_aggregates_and_roundtrips() {
        let pairs = vec![
            PairReport {
                a: "x".into(),
                b: "y".into(),
                kendalls_tau: 0.5,
                alignment_error: 0.1,
                phase_accuracy: 0.9,
            },
            PairReport {
                a: "x".into(),
                b: "z".into(),
                kendalls_tau: 0.7,
                alignment_error: 0.3,
                phase_accuracy: 0.7,
            },
        ];
        let r = EvalReport::from_pairs(pairs).unwrap();
        assert!((r.kendalls_tau - 0.6).abs() < 1e-12);
        assert!((r.mean_alignment_error - 0.2).abs() < 1e-12);
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
        assert!(EvalReport::from_pairs(vec![]).is_err());
    }
}
