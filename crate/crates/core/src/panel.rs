//! Firm-year panel ingestion, validation and the log-transformed estimation sample.
//!
//! The input contract is a comma-separated file with header
//! `entity_id,year,price,dps,cfps,bvps` (an optional `currency` column may be
//! present, in which case every row must carry the same code).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Number of explanatory indicators (dividends, cash flow, book value per share).
pub const N_REGRESSORS: usize = 3;

/// Names of the log-transformed regressors in design-column order.
pub const REGRESSOR_NAMES: [&str; N_REGRESSORS] = ["ln_dps", "ln_cfps", "ln_bvps"];

/// Currency recorded when the input carries no `currency` column.
pub const UNSPECIFIED_CURRENCY: &str = "UNSPECIFIED";

const REQUIRED_COLUMNS: [&str; 6] = ["entity_id", "year", "price", "dps", "cfps", "bvps"];

/// One raw firm-year record, before any transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub entity_id: String,
    pub period: i32,
    pub price: f64,
    pub dividends_per_share: f64,
    pub cashflow_per_share: f64,
    pub bookvalue_per_share: f64,
}

impl Observation {
    pub fn indicators(&self) -> [f64; N_REGRESSORS] {
        [
            self.dividends_per_share,
            self.cashflow_per_share,
            self.bookvalue_per_share,
        ]
    }

    /// True when the log transform is undefined for at least one field.
    pub fn has_nonpositive_value(&self) -> bool {
        self.price <= 0.0 || self.indicators().iter().any(|&v| v <= 0.0)
    }
}

/// Raw panel keyed by `(entity_id, period)`; may be unbalanced.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub observations: Vec<Observation>,
    pub currency_code: String,
}

impl PanelDataset {
    /// Builds a dataset, rejecting duplicate `(entity, period)` keys.
    pub fn new(observations: Vec<Observation>, currency_code: impl Into<String>) -> Result<Self> {
        let mut seen: HashMap<(&str, i32), usize> = HashMap::with_capacity(observations.len());
        for (i, obs) in observations.iter().enumerate() {
            if let Some(first) = seen.insert((obs.entity_id.as_str(), obs.period), i) {
                return Err(Error::DuplicateKey {
                    entity_id: obs.entity_id.clone(),
                    period: obs.period,
                    first_line: first as u64 + 2,
                    second_line: i as u64 + 2,
                });
            }
        }
        Ok(Self {
            observations,
            currency_code: currency_code.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Smallest and largest period present; every period lies in this range.
    pub fn period_range(&self) -> Option<(i32, i32)> {
        let min = self.observations.iter().map(|o| o.period).min()?;
        let max = self.observations.iter().map(|o| o.period).max()?;
        Some((min, max))
    }

    /// Writes the dataset in the input format. Reloading the output yields an
    /// identical dataset (floats are printed in shortest round-trip form).
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let with_currency = self.currency_code != UNSPECIFIED_CURRENCY;
        let mut w = std::io::BufWriter::new(out);
        write!(w, "{}", REQUIRED_COLUMNS.join(","))?;
        if with_currency {
            write!(w, ",currency")?;
        }
        writeln!(w)?;
        for o in &self.observations {
            write!(
                w,
                "{},{},{},{},{},{}",
                o.entity_id,
                o.period,
                o.price,
                o.dividends_per_share,
                o.cashflow_per_share,
                o.bookvalue_per_share
            )?;
            if with_currency {
                write!(w, ",{}", self.currency_code)?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

/// Parses a panel from delimited text.
///
/// Line numbers in errors count the header as line 1.
pub fn load_panel<R: Read>(source: R) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| Error::Malformed(e.to_string()))?
        .clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = position(name).ok_or_else(|| Error::MissingColumn {
            column: name.to_string(),
        })?;
    }
    let currency_idx = position("currency");

    let mut observations = Vec::new();
    let mut keys: HashMap<(String, i32), u64> = HashMap::new();
    let mut currency: Option<String> = None;

    for record in reader.records() {
        let record = record.map_err(|e| Error::Malformed(e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |col: usize| record.get(idx[col]).unwrap_or("");
        let number = |col: usize| -> Result<f64> {
            let raw = cell(col);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    line,
                    column: REQUIRED_COLUMNS[col].to_string(),
                    value: raw.to_string(),
                }),
            }
        };

        let entity_id = cell(0).to_string();
        if entity_id.is_empty() {
            return Err(Error::Parse {
                line,
                column: "entity_id".into(),
                value: String::new(),
            });
        }
        let period = cell(1).parse::<i32>().map_err(|_| Error::Parse {
            line,
            column: "year".into(),
            value: cell(1).to_string(),
        })?;
        let obs = Observation {
            entity_id,
            period,
            price: number(2)?,
            dividends_per_share: number(3)?,
            cashflow_per_share: number(4)?,
            bookvalue_per_share: number(5)?,
        };

        if let Some(ci) = currency_idx {
            let code = record.get(ci).unwrap_or("").to_string();
            match &currency {
                None => currency = Some(code),
                Some(first) if *first != code => {
                    return Err(Error::MixedCurrency {
                        first: first.clone(),
                        other: code,
                        line,
                    })
                }
                Some(_) => {}
            }
        }

        if let Some(&first_line) = keys.get(&(obs.entity_id.clone(), obs.period)) {
            return Err(Error::DuplicateKey {
                entity_id: obs.entity_id,
                period: obs.period,
                first_line,
                second_line: line,
            });
        }
        keys.insert((obs.entity_id.clone(), obs.period), line);
        observations.push(obs);
    }

    Ok(PanelDataset {
        observations,
        currency_code: currency.unwrap_or_else(|| UNSPECIFIED_CURRENCY.to_string()),
    })
}

/// Why a raw observation was excluded from estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    NonpositiveValue,
}

impl DropReason {
    /// Whether the reason's predicate holds for the given raw values.
    pub fn applies_to(&self, obs: &Observation) -> bool {
        match self {
            DropReason::NonpositiveValue => obs.has_nonpositive_value(),
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::NonpositiveValue => f.write_str("nonpositive value"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedRow {
    pub observation: Observation,
    pub reason: DropReason,
}

/// One log-transformed firm-year row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRow {
    pub entity_index: usize,
    pub period_index: usize,
    pub ln_y: f64,
    pub ln_x: [f64; N_REGRESSORS],
}

/// Validated, log-transformed design data.
///
/// Rows are sorted by `(entity_index, period_index)`; `entity_ids` and
/// `period_ids` are sorted ascending, so the sample does not depend on the
/// order of the input file.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationSample {
    pub rows: Vec<SampleRow>,
    pub entity_ids: Vec<String>,
    pub period_ids: Vec<i32>,
    pub drop_ledger: Vec<DroppedRow>,
}

impl EstimationSample {
    /// Builds a sample from already-transformed records `(entity, period, ln_y, ln_x)`.
    pub fn from_records<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, i32, f64, [f64; N_REGRESSORS])>,
    {
        let records: Vec<_> = records.into_iter().collect();
        if records.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut entity_ids: Vec<String> = records.iter().map(|r| r.0.clone()).collect();
        entity_ids.sort();
        entity_ids.dedup();
        let mut period_ids: Vec<i32> = records.iter().map(|r| r.1).collect();
        period_ids.sort_unstable();
        period_ids.dedup();

        let entity_lookup: HashMap<&str, usize> = entity_ids
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_str(), i))
            .collect();
        let period_lookup: HashMap<i32, usize> =
            period_ids.iter().enumerate().map(|(i, &p)| (p, i)).collect();

        let mut rows = Vec::with_capacity(records.len());
        for (entity, period, ln_y, ln_x) in &records {
            if !ln_y.is_finite() || ln_x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite value for ({entity}, {period})"
                )));
            }
            rows.push(SampleRow {
                entity_index: entity_lookup[entity.as_str()],
                period_index: period_lookup[period],
                ln_y: *ln_y,
                ln_x: *ln_x,
            });
        }
        rows.sort_by_key(|r| (r.entity_index, r.period_index));
        if rows
            .windows(2)
            .any(|w| (w[0].entity_index, w[0].period_index) == (w[1].entity_index, w[1].period_index))
        {
            return Err(Error::InvalidArgument("duplicate (entity, period) rows".into()));
        }

        Ok(Self {
            rows,
            entity_ids,
            period_ids,
            drop_ledger: Vec::new(),
        })
    }

    /// Rebuilds the index maps from the rows. On a sample produced by
    /// [`prepare_sample`] this is the identity.
    pub fn reindexed(&self) -> Result<Self> {
        let mut out = Self::from_records(self.rows.iter().map(|r| {
            (
                self.entity_ids[r.entity_index].clone(),
                self.period_ids[r.period_index],
                r.ln_y,
                r.ln_x,
            )
        }))?;
        out.drop_ledger = self.drop_ledger.clone();
        Ok(out)
    }

    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_entities(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.period_ids.len()
    }

    pub fn ln_y(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ln_y).collect()
    }

    /// Regressor `j` as a column.
    pub fn ln_x_column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.ln_x[j]).collect()
    }

    pub fn entity_index(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.entity_index).collect()
    }

    pub fn period_index(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.period_index).collect()
    }

    /// Writes the drop ledger in the input format plus a `reason` column.
    pub fn write_drop_ledger<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "{},reason", REQUIRED_COLUMNS.join(","))?;
        for d in &self.drop_ledger {
            let o = &d.observation;
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                o.entity_id,
                o.period,
                o.price,
                o.dividends_per_share,
                o.cashflow_per_share,
                o.bookvalue_per_share,
                d.reason
            )?;
        }
        w.flush()
    }
}

/// Log-transforms a raw panel, moving rows with any non-positive value to the
/// drop ledger.
pub fn prepare_sample(data: &PanelDataset) -> Result<EstimationSample> {
    let mut records = Vec::with_capacity(data.len());
    let mut drop_ledger = Vec::new();
    for obs in &data.observations {
        if obs.has_nonpositive_value() {
            drop_ledger.push(DroppedRow {
                observation: obs.clone(),
                reason: DropReason::NonpositiveValue,
            });
            continue;
        }
        let x = obs.indicators();
        records.push((
            obs.entity_id.clone(),
            obs.period,
            obs.price.ln(),
            [x[0].ln(), x[1].ln(), x[2].ln()],
        ));
    }
    let mut sample = EstimationSample::from_records(records)?;
    sample.drop_ledger = drop_ledger;
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelSummary {
    pub n_entities: usize,
    pub n_periods: usize,
    pub n_obs: usize,
    pub is_balanced: bool,
    pub per_period_counts: BTreeMap<i32, usize>,
}

pub fn panel_summary(sample: &EstimationSample) -> PanelSummary {
    let mut per_entity = vec![0usize; sample.n_entities()];
    let mut per_period_counts: BTreeMap<i32, usize> = BTreeMap::new();
    for r in &sample.rows {
        per_entity[r.entity_index] += 1;
        *per_period_counts
            .entry(sample.period_ids[r.period_index])
            .or_default() += 1;
    }
    let n_periods = sample.n_periods();
    PanelSummary {
        n_entities: sample.n_entities(),
        n_periods,
        n_obs: sample.n_obs(),
        is_balanced: per_entity.iter().all(|&c| c == n_periods),
        per_period_counts,
    }
}
