//! Summary statistics and baseline-relative normalization.
//!
//! Standard deviations are population deviations: a resource trace or a set
//! of repetitions is treated as the whole population, not a sample of it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sample::{Polarity, Sample};
use crate::scalar::{cmp, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("baseline must be positive, got {0}")]
    NonpositiveBaseline(f64),
    #[error("measured value must be positive for lower-is-better metrics, got {0}")]
    NonpositiveMeasured(f64),
    #[error("measured value must be non-negative, got {0}")]
    NegativeMeasured(f64),
    #[error("all x coordinates are equal; slope is undetermined")]
    DegenerateX,
    #[error("baseline environment '{0}' has no successful samples")]
    MissingBaseline(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SummaryStats<T: Scalar> {
    pub n: usize,
    pub mean: T,
    pub std: T,
    pub min: T,
    pub max: T,
}

pub fn summarize<T: Scalar>(values: &[T]) -> Result<SummaryStats<T>, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = T::from_count(values.len());
    let mut min = values[0];
    let mut max = values[0];
    let mut sum = T::zero();
    for &v in values {
        sum = sum + v;
        min = min.min(v);
        max = max.max(v);
    }
    // rounding in the sum can push the mean a hair past the extrema
    let mean = (sum / n).max(min).min(max);
    let sq = values.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean));
    Ok(SummaryStats { n: values.len(), mean, std: (sq / n).sqrt(), min, max })
}

pub fn mean<T: Scalar>(values: &[T]) -> Result<T, StatsError> {
    summarize(values).map(|s| s.mean)
}

pub fn median<T: Scalar>(values: &[T]) -> Result<T, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| cmp(*a, *b));
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / T::lit(2.0)
    })
}

/// Drops warm-up entries: keeps `(t, v)` with `t > trim_s`.
pub fn trim_warmup<T: Scalar, V: Clone>(series: &[(T, V)], trim_s: T) -> Vec<(T, V)> {
    series.iter().filter(|(t, _)| *t > trim_s).cloned().collect()
}

/// Percentage of `measured` relative to `baseline`, oriented so 100 is parity
/// and larger is better (or, for raw ratios, larger is more consumption).
pub fn normalize<T: Scalar>(measured: T, baseline: T, polarity: Polarity) -> Result<T, StatsError> {
    if !(baseline > T::zero()) || !baseline.is_finite() {
        return Err(StatsError::NonpositiveBaseline(baseline.as_f64()));
    }
    if !(measured >= T::zero()) || !measured.is_finite() {
        return Err(StatsError::NegativeMeasured(measured.as_f64()));
    }
    let hundred = T::lit(100.0);
    match polarity {
        Polarity::HigherBetter | Polarity::RawRatio => Ok(hundred * (measured / baseline)),
        Polarity::LowerBetter => {
            if measured <= T::zero() {
                return Err(StatsError::NonpositiveMeasured(measured.as_f64()));
            }
            Ok(hundred * (baseline / measured))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AffineFit<T: Scalar> {
    pub intercept: T,
    pub slope: T,
}

impl<T: Scalar> AffineFit<T> {
    pub fn predict(&self, x: T) -> T {
        self.intercept + self.slope * x
    }

    /// Root-mean-square residual over `points`.
    pub fn residual_rms(&self, points: &[(T, T)]) -> T {
        if points.is_empty() {
            return T::zero();
        }
        let sq = points.iter().fold(T::zero(), |acc, &(x, y)| {
            let r = y - self.predict(x);
            acc + r * r
        });
        (sq / T::from_count(points.len())).sqrt()
    }
}

/// Ordinary least squares fit of `y = a + b x`, via centered sums.
pub fn least_squares_affine<T: Scalar>(points: &[(T, T)]) -> Result<AffineFit<T>, StatsError> {
    if points.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = T::from_count(points.len());
    let (sx, sy) = points.iter().fold((T::zero(), T::zero()), |(sx, sy), &(x, y)| (sx + x, sy + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxx, sxy) = points.iter().fold((T::zero(), T::zero()), |(sxx, sxy), &(x, y)| {
        let dx = x - mx;
        (sxx + dx * dx, sxy + dx * (y - my))
    });
    if sxx == T::zero() {
        return Err(StatsError::DegenerateX);
    }
    let slope = sxy / sxx;
    Ok(AffineFit { intercept: my - slope * mx, slope })
}

/// How repetitions of one (environment, metric) cell are collapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCell {
    pub env_id: String,
    pub metric: String,
    pub percent: f64,
    pub polarity: Polarity,
    pub n: usize,
    /// `100 * std(env) / std(baseline)`; absent when the baseline spread is zero.
    pub std_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Available(NormalizedCell),
    Unavailable { env_id: String, metric: String, reason: String },
}

impl CellOutcome {
    pub fn percent(&self) -> Option<f64> {
        match self {
            CellOutcome::Available(c) => Some(c.percent),
            CellOutcome::Unavailable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedReport {
    pub baseline_env: String,
    pub aggregation: Aggregation,
    /// Baseline first, then in order of first appearance.
    pub environments: Vec<String>,
    pub metrics: Vec<String>,
    /// Row-major: `cells[m * environments.len() + e]`.
    pub cells: Vec<CellOutcome>,
}

impl NormalizedReport {
    pub fn cell(&self, env_id: &str, metric: &str) -> Option<&CellOutcome> {
        let e = self.environments.iter().position(|x| x == env_id)?;
        let m = self.metrics.iter().position(|x| x == metric)?;
        self.cells.get(m * self.environments.len() + e)
    }

    pub fn row(&self, metric: &str) -> Option<&[CellOutcome]> {
        let m = self.metrics.iter().position(|x| x == metric)?;
        let w = self.environments.len();
        Some(&self.cells[m * w..(m + 1) * w])
    }
}

struct CellValues {
    values: Vec<f64>,
    polarities: Vec<Polarity>,
}

/// Normalizes every (environment, metric) cell against the baseline
/// environment. `observations` are the successful samples tagged with the
/// environment they were measured in.
pub fn normalize_report<'a, I>(
    observations: I,
    baseline_env: &str,
    aggregation: Aggregation,
) -> Result<NormalizedReport, StatsError>
where
    I: IntoIterator<Item = (&'a str, &'a Sample)>,
{
    let mut environments: Vec<String> = vec![baseline_env.to_owned()];
    let mut metrics: Vec<String> = Vec::new();
    let mut table: BTreeMap<(String, String), CellValues> = BTreeMap::new();
    let mut baseline_seen = false;

    for (env, sample) in observations {
        if env == baseline_env {
            baseline_seen = true;
        } else if !environments.iter().any(|e| e == env) {
            environments.push(env.to_owned());
        }
        if !metrics.contains(&sample.metric) {
            metrics.push(sample.metric.clone());
        }
        let cell = table
            .entry((env.to_owned(), sample.metric.clone()))
            .or_insert_with(|| CellValues { values: Vec::new(), polarities: Vec::new() });
        cell.values.push(sample.value);
        cell.polarities.push(sample.polarity);
    }
    if !baseline_seen {
        return Err(StatsError::MissingBaseline(baseline_env.to_owned()));
    }
    metrics.sort();

    let aggregate = |v: &[f64]| match aggregation {
        Aggregation::Mean => mean(v),
        Aggregation::Median => median(v),
    };

    let mut cells = Vec::with_capacity(metrics.len() * environments.len());
    for metric in &metrics {
        let base = table.get(&(baseline_env.to_owned(), metric.clone()));
        for env in &environments {
            let unavailable = |reason: String| CellOutcome::Unavailable {
                env_id: env.clone(),
                metric: metric.clone(),
                reason,
            };
            let Some(base) = base else {
                cells.push(unavailable(format!("baseline '{baseline_env}' has no samples for {metric}")));
                continue;
            };
            let Some(own) = table.get(&(env.clone(), metric.clone())) else {
                cells.push(unavailable("no samples".into()));
                continue;
            };
            let polarity = base.polarities[0];
            if base.polarities.iter().chain(&own.polarities).any(|p| *p != polarity) {
                cells.push(unavailable("inconsistent polarity across samples".into()));
                continue;
            }
            let outcome = aggregate(&base.values)
                .and_then(|b| aggregate(&own.values).map(|m| (m, b)))
                .and_then(|(m, b)| normalize(m, b, polarity));
            match outcome {
                Ok(percent) => {
                    let own_std = summarize(&own.values)?.std;
                    let base_std = summarize(&base.values)?.std;
                    let std_percent = (base_std > 0.0).then(|| 100.0 * own_std / base_std);
                    cells.push(CellOutcome::Available(NormalizedCell {
                        env_id: env.clone(),
                        metric: metric.clone(),
                        percent,
                        polarity,
                        n: own.values.len(),
                        std_percent,
                    }));
                }
                Err(e) => cells.push(unavailable(e.to_string())),
            }
        }
    }

    Ok(NormalizedReport {
        baseline_env: baseline_env.to_owned(),
        aggregation,
        environments,
        metrics,
        cells,
    })
}
