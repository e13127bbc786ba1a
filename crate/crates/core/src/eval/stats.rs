//! Rate aggregation with bootstrap intervals, the design-based
//! bias-corrected mean estimator, and percent-decrease effect sizes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
const Z_95: f64 = 1.96;

fn mean(data: &[f64]) -> f64 {
    data.iter().sum::<f64>() / data.len() as f64
}

fn sample_sd(data: &[f64]) -> f64 {
    if data.len() < 2 {
        return 0.0;
    }
    let m = mean(data);
    let ss: f64 = data.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (data.len() - 1) as f64).sqrt()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Seeded percentile bootstrap CI for a statistic of one sample.
pub fn bootstrap_ci<F>(data: &[f64], stat: F, resamples: usize, seed: u64) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut buf = vec![0.0f64; data.len()];
    for _ in 0..resamples {
        for slot in &mut buf {
            *slot = data[rng.gen_range(0..data.len())];
        }
        stats.push(stat(&buf));
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite stats"));
    (percentile(&stats, 0.025), percentile(&stats, 0.975))
}

/// One aggregated row of the rate table.
#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub dataset: String,
    pub condition: String,
    pub n: usize,
    pub mean_mentions: f64,
    pub mean_ci: (f64, f64),
    pub mention_rate: f64,
    pub rate_ci: (f64, f64),
}

/// Mean mentions per generation and mention rate per `(dataset, condition)`
/// key, each with a seeded 95% bootstrap CI.
pub fn aggregate_rates(
    counts: &[f64],
    keys: &[(String, String)],
    seed: u64,
) -> Result<Vec<RateRow>> {
    if counts.is_empty() {
        return Err(Error::EmptyInput);
    }
    if counts.len() != keys.len() {
        return Err(Error::ShapeError(format!(
            "{} counts vs {} keys",
            counts.len(),
            keys.len()
        )));
    }
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (c, k) in counts.iter().zip(keys) {
        groups.entry(k.clone()).or_default().push(*c);
    }
    let mut rows = Vec::new();
    for (i, ((dataset, condition), data)) in groups.into_iter().enumerate() {
        let rate = |d: &[f64]| d.iter().filter(|c| **c > 0.0).count() as f64 / d.len() as f64;
        let row_seed = seed.wrapping_add(i as u64);
        rows.push(RateRow {
            dataset,
            condition,
            n: data.len(),
            mean_mentions: mean(&data),
            mean_ci: bootstrap_ci(&data, mean, BOOTSTRAP_RESAMPLES, row_seed),
            mention_rate: rate(&data),
            rate_ci: bootstrap_ci(&data, rate, BOOTSTRAP_RESAMPLES, row_seed.wrapping_add(1)),
        });
    }
    Ok(rows)
}

/// A gold label with its known inclusion probability.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GoldLabel {
    pub count: f64,
    pub pi: f64,
}

/// Bias-corrected mean mention count with analytic standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DslEstimate {
    pub point: f64,
    pub stderr: f64,
    pub ci: (f64, f64),
    pub n_total: usize,
    pub n_gold: usize,
}

/// Design-based bias correction of imperfect predictions with a randomly
/// gold-labeled subset: pseudo-outcome `m_i = yhat_i + (r_i/pi_i)(y_i -
/// yhat_i)`, its mean, and a normal-approximation CI.
///
/// Items are processed in sorted-id order, so the estimate is invariant to
/// input permutation.
pub fn dsl_estimate(
    predicted: &[(String, f64)],
    gold: &BTreeMap<String, GoldLabel>,
) -> Result<DslEstimate> {
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut by_id: BTreeMap<&str, f64> = BTreeMap::new();
    for (id, yhat) in predicted {
        by_id.insert(id.as_str(), *yhat);
    }
    for (id, label) in gold {
        if !by_id.contains_key(id.as_str()) {
            return Err(Error::KeyError(id.clone()));
        }
        if !(label.pi > 0.0 && label.pi <= 1.0) {
            return Err(Error::InvalidDesign(format!(
                "item {id} has inclusion probability {}",
                label.pi
            )));
        }
    }
    let pseudo: Vec<f64> = by_id
        .iter()
        .map(|(id, yhat)| match gold.get(*id) {
            Some(label) => yhat + (label.count - yhat) / label.pi,
            None => *yhat,
        })
        .collect();
    let point = mean(&pseudo);
    let stderr = sample_sd(&pseudo) / (pseudo.len() as f64).sqrt();
    Ok(DslEstimate {
        point,
        stderr,
        ci: (point - Z_95 * stderr, point + Z_95 * stderr),
        n_total: by_id.len(),
        n_gold: gold.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectMethod {
    Bigram,
    Judge,
    Dsl,
}

impl std::fmt::Display for EffectMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EffectMethod::Bigram => write!(f, "bigram"),
            EffectMethod::Judge => write!(f, "judge"),
            EffectMethod::Dsl => write!(f, "dsl"),
        }
    }
}

/// Percent change of mean mention counts; negative means a reduction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub percent: f64,
    pub ci: (f64, f64),
    pub method: EffectMethod,
}

fn pct_change(base_mean: f64, steered_mean: f64) -> f64 {
    (steered_mean - base_mean) / base_mean * 100.0
}

/// Percent decrease from per-item counts with a seeded bootstrap CI.
/// Equal-length conditions are resampled as pairs; otherwise the two
/// conditions are resampled independently.
pub fn percent_decrease_counts(
    base: &[f64],
    steered: &[f64],
    method: EffectMethod,
    seed: u64,
) -> Result<EffectEstimate> {
    if base.is_empty() || steered.is_empty() {
        return Err(Error::EmptyInput);
    }
    let base_mean = mean(base);
    if base_mean <= 0.0 {
        return Err(Error::UndefinedEffect);
    }
    let point = pct_change(base_mean, mean(steered));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paired = base.len() == steered.len();
    let mut stats = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let (bm, sm) = if paired {
            let mut bsum = 0.0;
            let mut ssum = 0.0;
            for _ in 0..base.len() {
                let i = rng.gen_range(0..base.len());
                bsum += base[i];
                ssum += steered[i];
            }
            (bsum / base.len() as f64, ssum / base.len() as f64)
        } else {
            let resample = |rng: &mut ChaCha8Rng, data: &[f64]| {
                (0..data.len())
                    .map(|_| data[rng.gen_range(0..data.len())])
                    .sum::<f64>()
                    / data.len() as f64
            };
            let bm = resample(&mut rng, base);
            let sm = resample(&mut rng, steered);
            (bm, sm)
        };
        if bm > 0.0 {
            stats.push(pct_change(bm, sm));
        }
    }
    if stats.is_empty() {
        return Err(Error::UndefinedEffect);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite stats"));
    let lo = percentile(&stats, 0.025).min(point);
    let hi = percentile(&stats, 0.975).max(point);
    Ok(EffectEstimate {
        percent: point,
        ci: (lo, hi),
        method,
    })
}

/// Percent decrease between two DSL estimates; the CI propagates their
/// analytic standard errors through the ratio (delta method, independent
/// conditions).
pub fn percent_decrease_dsl(base: &DslEstimate, steered: &DslEstimate) -> Result<EffectEstimate> {
    if base.point <= 0.0 {
        return Err(Error::UndefinedEffect);
    }
    let point = pct_change(base.point, steered.point);
    let b = base.point;
    let s = steered.point;
    let var = steered.stderr.powi(2) / (b * b) + (s * s) * base.stderr.powi(2) / b.powi(4);
    let half = Z_95 * var.sqrt() * 100.0;
    Ok(EffectEstimate {
        percent: point,
        ci: (point - half, point + half),
        method: EffectMethod::Dsl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_constant_counts() {
        let counts = vec![1.0, 1.0, 1.0];
        let keys = vec![("d".to_string(), "base".to_string()); 3];
        let rows = aggregate_rates(&counts, &keys, 9).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean_mentions - 1.0).abs() < 1e-12);
        assert!((rows[0].mention_rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_all_zero_has_degenerate_ci() {
        let counts = vec![0.0; 10];
        let keys = vec![("d".to_string(), "base".to_string()); 10];
        let rows = aggregate_rates(&counts, &keys, 9).unwrap();
        assert_eq!(rows[0].mean_ci, (0.0, 0.0));
        assert_eq!(rows[0].rate_ci, (0.0, 0.0));
        assert!(aggregate_rates(&[], &[], 0).is_err());
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let data: Vec<f64> = (0..50).map(|i| f64::from(i % 7)).collect();
        let a = bootstrap_ci(&data, mean, 500, 4);
        let b = bootstrap_ci(&data, mean, 500, 4);
        assert_eq!(a, b);
        let c = bootstrap_ci(&data, mean, 500, 5);
        assert_ne!(a, c);
    }

    fn pred(values: &[f64]) -> Vec<(String, f64)> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("i{i:04}"), *v))
            .collect()
    }

    #[test]
    fn dsl_full_supervision_collapses_to_gold_mean() {
        let predicted = pred(&[5.0, 5.0, 5.0, 5.0]);
        let gold: BTreeMap<String, GoldLabel> = predicted
            .iter()
            .enumerate()
            .map(|(i, (id, _))| {
                (
                    id.clone(),
                    GoldLabel {
                        count: i as f64,
                        pi: 1.0,
                    },
                )
            })
            .collect();
        let est = dsl_estimate(&predicted, &gold).unwrap();
        assert_eq!(est.point, 1.5); // mean of 0,1,2,3
        assert_eq!(est.n_gold, 4);
    }

    #[test]
    fn dsl_perfect_predictor_ignores_pi() {
        let predicted = pred(&[2.0, 4.0, 6.0, 8.0]);
        let gold: BTreeMap<String, GoldLabel> = [
            ("i0000", 2.0),
            ("i0002", 6.0),
        ]
        .iter()
        .map(|(id, c)| {
            (
                (*id).to_string(),
                GoldLabel {
                    count: *c,
                    pi: 0.37,
                },
            )
        })
        .collect();
        let est = dsl_estimate(&predicted, &gold).unwrap();
        assert_eq!(est.point, 5.0); // mean of predictions, zero residual
    }

    #[test]
    fn dsl_without_gold_is_plugin_mean() {
        let predicted = pred(&[1.0, 2.0, 3.0]);
        let est = dsl_estimate(&predicted, &BTreeMap::new()).unwrap();
        assert_eq!(est.point, 2.0);
        assert_eq!(est.n_gold, 0);
    }

    #[test]
    fn dsl_is_permutation_invariant() {
        let mut predicted = pred(&[1.0, 2.5, 3.0, 7.0, 0.5]);
        let gold: BTreeMap<String, GoldLabel> = [("i0001", 3.0), ("i0004", 1.0)]
            .iter()
            .map(|(id, c)| ((*id).to_string(), GoldLabel { count: *c, pi: 0.4 }))
            .collect();
        let a = dsl_estimate(&predicted, &gold).unwrap();
        predicted.reverse();
        predicted.swap(0, 2);
        let b = dsl_estimate(&predicted, &gold).unwrap();
        assert_eq!(a.point, b.point);
        assert_eq!(a.stderr, b.stderr);
    }

    #[test]
    fn dsl_rejects_bad_designs() {
        let predicted = pred(&[1.0]);
        let gold: BTreeMap<String, GoldLabel> = [(
            "i0000".to_string(),
            GoldLabel {
                count: 1.0,
                pi: 0.0,
            },
        )]
        .into_iter()
        .collect();
        assert!(matches!(
            dsl_estimate(&predicted, &gold),
            Err(Error::InvalidDesign(_))
        ));
        let gold: BTreeMap<String, GoldLabel> = [(
            "missing".to_string(),
            GoldLabel {
                count: 1.0,
                pi: 0.5,
            },
        )]
        .into_iter()
        .collect();
        assert!(matches!(
            dsl_estimate(&predicted, &gold),
            Err(Error::KeyError(_))
        ));
    }

    #[test]
    fn ci_contains_point_by_construction() {
        let predicted = pred(&[0.0, 1.0, 2.0, 5.0]);
        let est = dsl_estimate(&predicted, &BTreeMap::new()).unwrap();
        assert!(est.ci.0 <= est.point && est.point <= est.ci.1);
    }

    #[test]
    fn percent_decrease_constant_counts() {
        let base = vec![2.0; 8];
        let steered = vec![1.0; 8];
        let e = percent_decrease_counts(&base, &steered, EffectMethod::Bigram, 7).unwrap();
        assert_eq!(e.percent, -50.0);
        assert!(e.ci.0 <= e.percent && e.percent <= e.ci.1);
    }

    #[test]
    fn percent_decrease_null_effect() {
        let a: Vec<f64> = (0..20).map(|i| f64::from(i % 3)).collect();
        let e = percent_decrease_counts(&a, &a, EffectMethod::Judge, 3).unwrap();
        assert_eq!(e.percent, 0.0);
        assert!(e.ci.0 <= 0.0 && 0.0 <= e.ci.1);
    }

    #[test]
    fn percent_decrease_zero_baseline_is_undefined() {
        let base = vec![0.0; 4];
        let steered = vec![1.0; 4];
        assert!(matches!(
            percent_decrease_counts(&base, &steered, EffectMethod::Bigram, 1),
            Err(Error::UndefinedEffect)
        ));
    }

    #[test]
    fn percent_decrease_dsl_delta_method() {
        let base = DslEstimate {
            point: 2.0,
            stderr: 0.1,
            ci: (1.8, 2.2),
            n_total: 100,
            n_gold: 20,
        };
        let steered = DslEstimate {
            point: 1.0,
            stderr: 0.1,
            ci: (0.8, 1.2),
            n_total: 100,
            n_gold: 20,
        };
        let e = percent_decrease_dsl(&base, &steered).unwrap();
        assert_eq!(e.percent, -50.0);
        // var = 0.01/4 + 1*0.01/16 = 0.0025 + 0.000625 = 0.003125
        let half = 1.96 * 0.003125f64.sqrt() * 100.0;
        assert!((e.ci.0 - (-50.0 - half)).abs() < 1e-9);
        assert!((e.ci.1 - (-50.0 + half)).abs() < 1e-9);
    }
}
