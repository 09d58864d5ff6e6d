//! Theoretical values, fundamentals with period effects removed, divergence
//! rates and their yearly distribution.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{EffectsDecomposition, FitResult};
use crate::panel::{EstimationSample, N_REGRESSORS};

/// Default histogram bin width in log units.
pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    /// `a0 + μ_i + γ_t + x·b`.
    Theoretical,
    /// `a0 + μ_i + x·b`.
    Fundamentals,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::Theoretical => "theoretical",
            ValueKind::Fundamentals => "fundamentals",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueRow {
    pub entity_id: String,
    pub period: i32,
    pub value: f64,
}

/// Log values aligned row by row with an estimation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSeries {
    pub kind: ValueKind,
    pub rows: Vec<ValueRow>,
}

impl ValueSeries {
    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }
}

fn check_alignment(sample: &EstimationSample, rows: &[ValueRow]) -> Result<()> {
    if rows.len() != sample.n_obs() {
        return Err(Error::Alignment(format!(
            "series has {} rows, sample has {}",
            rows.len(),
            sample.n_obs()
        )));
    }
    for (r, s) in rows.iter().zip(&sample.rows) {
        if r.entity_id != sample.entity_ids[s.entity_index] || r.period != sample.period_ids[s.period_index] {
            return Err(Error::Alignment(format!(
                "row ({}, {}) does not match the sample",
                r.entity_id, r.period
            )));
        }
    }
    Ok(())
}

fn build_series(
    sample: &EstimationSample,
    fit: &FitResult,
    effects: &EffectsDecomposition,
    kind: ValueKind,
) -> Result<ValueSeries> {
    if fit.slopes.len() != N_REGRESSORS {
        return Err(Error::Alignment("fit does not carry three slopes".into()));
    }
    let mu: Vec<f64> = sample
        .entity_ids
        .iter()
        .map(|e| {
            effects
                .mu
                .get(e)
                .copied()
                .ok_or_else(|| Error::Alignment(format!("no individual effect for entity {e}")))
        })
        .collect::<Result<_>>()?;
    let gamma: Vec<f64> = sample
        .period_ids
        .iter()
        .map(|p| {
            effects
                .gamma
                .get(p)
                .copied()
                .ok_or_else(|| Error::Alignment(format!("no period effect for {p}")))
        })
        .collect::<Result<_>>()?;
    let rows = sample
        .rows
        .iter()
        .map(|r| {
            let xb: f64 = r.ln_x.iter().zip(&fit.slopes).map(|(x, b)| x * b).sum();
            let base = effects.a0 + mu[r.entity_index] + xb;
            let value = match kind {
                ValueKind::Theoretical => base + gamma[r.period_index],
                ValueKind::Fundamentals => base,
            };
            ValueRow {
                entity_id: sample.entity_ids[r.entity_index].clone(),
                period: sample.period_ids[r.period_index],
                value,
            }
        })
        .collect();
    Ok(ValueSeries { kind, rows })
}

/// `ln Ŷ_it = a0 + μ_i + γ_t + Σ b_k ln X_k,it`.
pub fn theoretical_value(
    sample: &EstimationSample,
    fit: &FitResult,
    effects: &EffectsDecomposition,
) -> Result<ValueSeries> {
    build_series(sample, fit, effects, ValueKind::Theoretical)
}

/// `ln Ỹ_it = a0 + μ_i + Σ b_k ln X_k,it`: the theoretical value without the
/// period effect.
pub fn fundamentals_series(
    sample: &EstimationSample,
    fit: &FitResult,
    effects: &EffectsDecomposition,
) -> Result<ValueSeries> {
    build_series(sample, fit, effects, ValueKind::Fundamentals)
}

/// Per-row divergence `D_it = ln Y_it − ln Ỹ_it`.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub rows: Vec<ValueRow>,
}

impl Divergence {
    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let mut y: Vec<i32> = self.rows.iter().map(|r| r.period).collect();
        y.sort_unstable();
        y.dedup();
        y
    }

    fn by_year(&self) -> BTreeMap<i32, Vec<f64>> {
        let mut out: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            out.entry(r.period).or_default().push(r.value);
        }
        out
    }
}

pub fn divergence_rates(sample: &EstimationSample, fundamentals: &ValueSeries) -> Result<Divergence> {
    if fundamentals.kind != ValueKind::Fundamentals {
        return Err(Error::InvalidArgument("divergence is measured against fundamentals".into()));
    }
    check_alignment(sample, &fundamentals.rows)?;
    let rows = fundamentals
        .rows
        .iter()
        .zip(&sample.rows)
        .map(|(f, s)| ValueRow {
            entity_id: f.entity_id.clone(),
            period: f.period,
            value: s.ln_y - f.value,
        })
        .collect();
    Ok(Divergence { rows })
}

/// Single-pass central moments (Welford, extended to third and fourth order).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StreamingMoments {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl StreamingMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2 - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample standard deviation (`n − 1` denominator).
    pub fn std_dev(&self) -> Option<f64> {
        (self.n >= 2).then(|| (self.m2 / (self.n as f64 - 1.0)).sqrt())
    }

    /// `g1 = m3 / m2^{3/2}` with `n`-denominator central moments.
    pub fn skewness(&self) -> Option<f64> {
        if self.n < 2 || self.is_degenerate() {
            return None;
        }
        let n = self.n as f64;
        Some((self.m3 / n) / (self.m2 / n).powf(1.5))
    }

    /// `m4 / m2²` with `n`-denominator central moments.
    pub fn raw_kurtosis(&self) -> Option<f64> {
        if self.n < 2 || self.is_degenerate() {
            return None;
        }
        let n = self.n as f64;
        Some((self.m4 / n) / (self.m2 / n).powi(2))
    }

    pub fn excess_kurtosis(&self) -> Option<f64> {
        self.raw_kurtosis().map(|k| k - 3.0)
    }

    fn is_degenerate(&self) -> bool {
        let n = self.n as f64;
        let scale = self.mean.abs().max(f64::MIN_POSITIVE);
        self.m2 / n <= (1e-14 * scale).powi(2)
    }
}

impl FromIterator<f64> for StreamingMoments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Self::new();
        for x in iter {
            m.push(x);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YearFlag {
    /// Fewer than two observations; moments omitted.
    TooFewObservations,
    /// No dispersion; skewness and kurtosis undefined.
    ZeroVariance,
}

impl fmt::Display for YearFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            YearFlag::TooFewObservations => "too_few_observations",
            YearFlag::ZeroVariance => "zero_variance",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearStats {
    pub year: i32,
    pub n_obs: usize,
    pub mean: Option<f64>,
    pub std_dev: Option<f64>,
    pub skewness: Option<f64>,
    pub raw_kurtosis: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    pub flag: Option<YearFlag>,
}

/// Yearly moments of the divergence rate, sorted by year.
pub fn yearly_divergence_stats(divergence: &Divergence) -> Vec<YearStats> {
    let groups: Vec<(i32, Vec<f64>)> = divergence.by_year().into_iter().collect();
    groups
        .into_par_iter()
        .map(|(year, values)| {
            let m: StreamingMoments = values.iter().copied().collect();
            let n_obs = values.len();
            if n_obs < 2 {
                return YearStats {
                    year,
                    n_obs,
                    mean: None,
                    std_dev: None,
                    skewness: None,
                    raw_kurtosis: None,
                    excess_kurtosis: None,
                    flag: Some(YearFlag::TooFewObservations),
                };
            }
            let degenerate = m.is_degenerate();
            YearStats {
                year,
                n_obs,
                mean: Some(m.mean()),
                std_dev: if degenerate { Some(0.0) } else { m.std_dev() },
                skewness: m.skewness(),
                raw_kurtosis: m.raw_kurtosis(),
                excess_kurtosis: m.excess_kurtosis(),
                flag: degenerate.then_some(YearFlag::ZeroVariance),
            }
        })
        .collect()
}

/// Mean divergence per year over every year with at least one observation.
pub fn mean_divergence(divergence: &Divergence) -> Vec<(i32, f64)> {
    divergence
        .by_year()
        .into_iter()
        .map(|(y, v)| (y, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub rel_freq: f64,
}

/// Relative-frequency histograms on a bin grid shared by all selected years.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramExport {
    pub bin_width: f64,
    pub series: BTreeMap<i32, Vec<HistogramBin>>,
}

const MAX_BINS: i64 = 1_000_000;

/// Histograms with bins `[k·w, (k+1)·w)` covering the pooled range of the
/// selected years.
pub fn distribution_export(divergence: &Divergence, years: &[i32], bin_width: f64) -> Result<HistogramExport> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidArgument(format!("bin width must be positive, got {bin_width}")));
    }
    let by_year = divergence.by_year();
    let mut selected: BTreeMap<i32, &Vec<f64>> = BTreeMap::new();
    for y in years {
        match by_year.get(y) {
            Some(v) => {
                selected.insert(*y, v);
            }
            None => return Err(Error::InvalidArgument(format!("year {y} has no observations"))),
        }
    }
    let all = selected.values().flat_map(|v| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if selected.is_empty() || !lo.is_finite() {
        return Err(Error::EmptyExport);
    }
    let k_lo = (lo / bin_width).floor() as i64;
    let k_hi = (hi / bin_width).floor() as i64;
    let n_bins = k_hi - k_lo + 1;
    if n_bins > MAX_BINS {
        return Err(Error::InvalidArgument(format!(
            "bin width {bin_width} yields {n_bins} bins (limit {MAX_BINS})"
        )));
    }
    let n_bins = n_bins as usize;
    let series = selected
        .into_iter()
        .map(|(year, values)| {
            let mut counts = vec![0usize; n_bins];
            for v in values {
                let k = ((v / bin_width).floor() as i64 - k_lo).clamp(0, n_bins as i64 - 1);
                counts[k as usize] += 1;
            }
            let n = values.len() as f64;
            let bins = counts
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let k = (k_lo + i as i64) as f64;
                    HistogramBin {
                        bin_left: k * bin_width,
                        bin_right: (k + 1.0) * bin_width,
                        rel_freq: c as f64 / n,
                    }
                })
                .collect();
            (year, bins)
        })
        .collect();
    Ok(HistogramExport { bin_width, series })
}

/// Number of modes in a histogram after a centered moving average of half
/// width `half_window`. A peak counts once it rises at least `prominence`
/// above the preceding trough and then falls at least `prominence` below its
/// top; the series is zero-padded at both ends.
pub fn count_modes(rel_freq: &[f64], half_window: usize, prominence: f64) -> usize {
    let n = rel_freq.len();
    let width = (2 * half_window + 1) as f64;
    let smoothed = (0..n).map(|i| {
        let a = i.saturating_sub(half_window);
        let b = (i + half_window + 1).min(n);
        rel_freq[a..b].iter().sum::<f64>() / width
    });
    let mut modes = 0;
    let mut trough = 0.0f64;
    let mut peak: Option<f64> = None;
    for v in smoothed.chain(std::iter::once(0.0)) {
        match peak {
            Some(top) if v > top => peak = Some(v),
            Some(top) => {
                if top - v >= prominence {
                    modes += 1;
                    peak = None;
                    trough = v;
                }
            }
            None if v < trough => trough = v,
            None => {
                if v - trough >= prominence {
                    peak = Some(v);
                }
            }
        }
    }
    modes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{fit_fixed_effects, EffectMode};

    fn sample() -> EstimationSample {
        let recs = (0..48).map(|i| {
            let t = i as f64;
            let e = i / 6;
            let p = i % 6;
            let x = [t.sin(), (0.37 * t).cos() + 0.1 * p as f64, (1.3 * t).sin()];
            let y = 0.4 * e as f64 - 0.1 * p as f64 + 0.3 * x[0] + 0.2 * x[1] + 0.5 * x[2] + 0.05 * (2.7 * t).sin();
            (format!("e{e}"), 2010 + p, y, x)
        });
        EstimationSample::from_records(recs).unwrap()
    }

    #[test]
    fn single_row_arithmetic() {
        let s = EstimationSample::from_records(vec![("a".to_string(), 2000, 3.0, [1.0, 1.0, 1.0])]).unwrap();
        let mut fit = fit_fixed_effects(&sample(), EffectMode::Twoway).unwrap();
        fit.slopes = vec![0.1, 0.2, 0.3];
        let effects = EffectsDecomposition {
            a0: 1.0,
            mu: [("a".to_string(), 0.5)].into(),
            gamma: [(2000, -0.2)].into(),
            normalization: crate::estimators::Normalization::ObservationWeightedSumToZero,
            sweeps: 0,
        };
        let th = theoretical_value(&s, &fit, &effects).unwrap();
        let fu = fundamentals_series(&s, &fit, &effects).unwrap();
        assert!((th.rows[0].value - 1.9).abs() < 1e-12);
        assert!((fu.rows[0].value - 2.1).abs() < 1e-12);
        let d = divergence_rates(&s, &fu).unwrap();
        assert!((d.rows[0].value - 0.9).abs() < 1e-12);
    }

    #[test]
    fn missing_effect_is_alignment_error() {
        let s = sample();
        let fit = fit_fixed_effects(&s, EffectMode::Twoway).unwrap();
        let mut effects = fit.effects.clone().unwrap();
        effects.gamma.remove(&2012);
        assert!(matches!(theoretical_value(&s, &fit, &effects), Err(Error::Alignment(_))));
    }

    #[test]
    fn identities_hold_row_wise() {
        let s = sample();
        let fit = fit_fixed_effects(&s, EffectMode::Twoway).unwrap();
        let effects = fit.effects.clone().unwrap();
        let th = theoretical_value(&s, &fit, &effects).unwrap();
        let fu = fundamentals_series(&s, &fit, &effects).unwrap();
        let d = divergence_rates(&s, &fu).unwrap();
        for (i, r) in s.rows.iter().enumerate() {
            let gamma = effects.gamma[&s.period_ids[r.period_index]];
            assert!((r.ln_y - th.rows[i].value - fit.residuals[i]).abs() < 1e-10);
            assert!((th.rows[i].value - fu.rows[i].value - gamma).abs() < 1e-12);
            assert!((d.rows[i].value - gamma - fit.residuals[i]).abs() < 1e-10);
        }
        for (year, mean) in mean_divergence(&d) {
            let res: Vec<f64> = s
                .rows
                .iter()
                .zip(&fit.residuals)
                .filter(|(r, _)| s.period_ids[r.period_index] == year)
                .map(|(_, e)| *e)
                .collect();
            let m = res.iter().sum::<f64>() / res.len() as f64;
            assert!((mean - effects.gamma[&year] - m).abs() < 1e-10);
        }
    }

    #[test]
    fn divergence_requires_fundamentals_and_alignment() {
        let s = sample();
        let fit = fit_fixed_effects(&s, EffectMode::Twoway).unwrap();
        let effects = fit.effects.clone().unwrap();
        let th = theoretical_value(&s, &fit, &effects).unwrap();
        assert!(divergence_rates(&s, &th).is_err());
        let mut fu = fundamentals_series(&s, &fit, &effects).unwrap();
        fu.rows.swap(0, 1);
        assert!(matches!(divergence_rates(&s, &fu), Err(Error::Alignment(_))));
        fu.rows.pop();
        assert!(matches!(divergence_rates(&s, &fu), Err(Error::Alignment(_))));
    }

    fn div(values: &[(i32, f64)]) -> Divergence {
        Divergence {
            rows: values
                .iter()
                .enumerate()
                .map(|(i, &(period, value))| ValueRow {
                    entity_id: format!("e{i}"),
                    period,
                    value,
                })
                .collect(),
        }
    }

    #[test]
    fn yearly_flags_and_symmetry() {
        let d = div(&[(1, -1.0), (1, 0.0), (1, 1.0), (2, 0.3), (2, 0.3), (2, 0.3), (3, 5.0)]);
        let stats = yearly_divergence_stats(&d);
        assert_eq!(stats.iter().map(|s| s.year).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(stats.iter().map(|s| s.n_obs).sum::<usize>(), 7);
        assert_eq!(stats[0].skewness, Some(0.0));
        assert!((stats[0].std_dev.unwrap() - 1.0).abs() < 1e-15);
        assert!((stats[0].raw_kurtosis.unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(stats[1].std_dev, Some(0.0));
        assert_eq!(stats[1].flag, Some(YearFlag::ZeroVariance));
        assert!(stats[1].skewness.is_none() && stats[1].excess_kurtosis.is_none());
        assert_eq!(stats[2].flag, Some(YearFlag::TooFewObservations));
        assert!(stats[2].mean.is_none());
    }

    #[test]
    fn histogram_single_observation_and_alignment() {
        let d = div(&[(1, 0.123)]);
        let h = distribution_export(&d, &[1], 0.05).unwrap();
        let bins = &h.series[&1];
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].rel_freq, 1.0);
        assert!((bins[0].bin_left - 0.1).abs() < 1e-15 && (bins[0].bin_right - 0.15).abs() < 1e-15);
        assert_eq!(distribution_export(&d, &[], 0.05).unwrap_err(), Error::EmptyExport);
        assert!(distribution_export(&d, &[2], 0.05).is_err());
        assert!(distribution_export(&d, &[1], 0.0).is_err());
    }

    #[test]
    fn histogram_frequencies_sum_to_one() {
        let vals: Vec<(i32, f64)> = (0..500).map(|i| (2000 + i % 3, ((i * 37 % 101) as f64 - 50.0) / 70.0)).collect();
        let d = div(&vals);
        let h = distribution_export(&d, &[2000, 2001, 2002], 0.05).unwrap();
        let len = h.series[&2000].len();
        for bins in h.series.values() {
            assert_eq!(bins.len(), len);
            assert!((bins.iter().map(|b| b.rel_freq).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mode_counting() {
        let uni = [0.0, 0.1, 0.3, 0.4, 0.15, 0.05];
        assert_eq!(count_modes(&uni, 0, 0.05), 1);
        let bi = [0.05, 0.2, 0.22, 0.03, 0.02, 0.18, 0.25, 0.05];
        assert_eq!(count_modes(&bi, 0, 0.05), 2);
        // small wiggles below the prominence threshold are ignored
        let wiggle = [0.1, 0.3, 0.28, 0.3, 0.02];
        assert_eq!(count_modes(&wiggle, 0, 0.05), 1);
        assert_eq!(count_modes(&[], 1, 0.05), 0);
    }
}
