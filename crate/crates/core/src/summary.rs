//! Posterior summaries per day: weighted means, medians, and quantiles of
//! states, parameters, latent counts, and `R₀(t)`.
//!
//! CSV layout (one row per day and quantity, columns in this order):
//!
//! ```text
//! day_index,date,observed,quantity,mean,median,q<p1>,q<p2>,...
//! ```
//!
//! `date` is ISO-8601 or empty, `observed` is `true`/`false`, and the
//! quantile columns follow the configured probabilities (default `q0.05`,
//! `q0.95`). Floats are written in shortest round-trip form.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdpf::{Particle, ParticleEnsemble};
use crate::model::r0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "c")]
    C,
    E,
    I,
    R,
    D,
    /// Latent cumulative cases in persons, `P (I + R)`.
    #[serde(rename = "cases")]
    Cases,
    /// Latent cumulative deaths in persons, `P D`.
    #[serde(rename = "deaths")]
    Deaths,
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "beta")]
    Beta,
    #[serde(rename = "lambda")]
    Lambda,
    #[serde(rename = "gamma")]
    Gamma,
    #[serde(rename = "phi_f")]
    PhiF,
    R0,
}

impl Quantity {
    pub const ALL: [Quantity; 13] = [
        Quantity::C,
        Quantity::E,
        Quantity::I,
        Quantity::R,
        Quantity::D,
        Quantity::Cases,
        Quantity::Deaths,
        Quantity::Alpha,
        Quantity::Beta,
        Quantity::Lambda,
        Quantity::Gamma,
        Quantity::PhiF,
        Quantity::R0,
    ];

    pub const STATES: [Quantity; 7] = [
        Quantity::C,
        Quantity::E,
        Quantity::I,
        Quantity::R,
        Quantity::D,
        Quantity::Cases,
        Quantity::Deaths,
    ];

    pub const PARAMS: [Quantity; 5] = [
        Quantity::Alpha,
        Quantity::Beta,
        Quantity::Lambda,
        Quantity::Gamma,
        Quantity::PhiF,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Quantity::C => "c",
            Quantity::E => "E",
            Quantity::I => "I",
            Quantity::R => "R",
            Quantity::D => "D",
            Quantity::Cases => "cases",
            Quantity::Deaths => "deaths",
            Quantity::Alpha => "alpha",
            Quantity::Beta => "beta",
            Quantity::Lambda => "lambda",
            Quantity::Gamma => "gamma",
            Quantity::PhiF => "phi_f",
            Quantity::R0 => "R0",
        }
    }

    fn value(&self, p: &Particle, population: f64) -> Result<f64> {
        let s = &p.state;
        let t = &p.params;
        Ok(match self {
            Quantity::C => s.c,
            Quantity::E => s.e,
            Quantity::I => s.i,
            Quantity::R => s.r,
            Quantity::D => s.d,
            Quantity::Cases => population * (s.i + s.r),
            Quantity::Deaths => population * s.d,
            Quantity::Alpha => t.alpha,
            Quantity::Beta => t.beta,
            Quantity::Lambda => t.lambda,
            Quantity::Gamma => t.gamma,
            Quantity::PhiF => t.phi_f,
            Quantity::R0 => r0(s, t)?,
        })
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Quantity::ALL
            .iter()
            .copied()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown quantity `{s}`")))
    }
}

/// A weighted particle cloud for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayCloud {
    pub day_index: i64,
    /// False for days between reports (propagated, not reweighted).
    pub observed: bool,
    pub particles: Vec<Particle>,
}

impl DayCloud {
    pub fn from_ensemble(ensemble: &ParticleEnsemble, observed: bool) -> Self {
        DayCloud {
            day_index: ensemble.day_index,
            observed,
            particles: ensemble.particles.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityStats {
    pub quantity: Quantity,
    pub mean: f64,
    pub median: f64,
    /// Values at [`TrajectorySummary::quantiles`], same order.
    pub quantiles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub day_index: i64,
    pub date: Option<NaiveDate>,
    pub observed: bool,
    pub stats: Vec<QuantityStats>,
}

impl DaySummary {
    pub fn get(&self, q: Quantity) -> Option<&QuantityStats> {
        self.stats.iter().find(|s| s.quantity == q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub quantiles: Vec<f64>,
    pub days: Vec<DaySummary>,
}

impl TrajectorySummary {
    pub fn new(quantiles: Vec<f64>) -> Result<Self> {
        validate_quantiles(&quantiles)?;
        Ok(TrajectorySummary {
            quantiles,
            days: Vec::new(),
        })
    }

    pub fn push(&mut self, day: DaySummary) {
        self.days.push(day);
    }

    /// Per-day series of one statistic.
    pub fn series(&self, q: Quantity) -> Vec<(i64, &QuantityStats)> {
        self.days
            .iter()
            .filter_map(|d| d.get(q).map(|s| (d.day_index, s)))
            .collect()
    }

    pub fn quantile_index(&self, p: f64) -> Option<usize> {
        self.quantiles.iter().position(|v| (v - p).abs() < 1e-12)
    }
}

pub fn validate_quantiles(quantiles: &[f64]) -> Result<()> {
    for q in quantiles {
        if !(*q > 0.0 && *q < 1.0) {
            return Err(Error::Validation(format!("quantile {q} outside (0, 1)")));
        }
    }
    if quantiles.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("quantiles must be strictly increasing".into()));
    }
    Ok(())
}

/// Smallest value whose cumulative normalized weight reaches `q`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    weighted_quantile_sorted(values, weights, &order, q)
}

fn weighted_quantile_sorted(values: &[f64], weights: &[f64], order: &[usize], q: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let target = q * total;
    let mut acc = 0.0;
    for &k in order {
        acc += weights[k];
        if acc >= target {
            return values[k];
        }
    }
    values[*order.last().expect("non-empty")]
}

pub fn summarize_cloud(
    cloud: &DayCloud,
    date: Option<NaiveDate>,
    quantiles: &[f64],
    population: u64,
) -> Result<DaySummary> {
    if cloud.particles.is_empty() {
        return Err(Error::Validation(format!("empty ensemble on day {}", cloud.day_index)));
    }
    let weights: Vec<f64> = cloud.particles.iter().map(|p| p.weight).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Validation(format!("zero total weight on day {}", cloud.day_index)));
    }
    let pop = population as f64;
    let mut stats = Vec::with_capacity(Quantity::ALL.len());
    for q in Quantity::ALL {
        let values = cloud
            .particles
            .iter()
            .map(|p| q.value(p, pop))
            .collect::<Result<Vec<f64>>>()?;
        let mean = values.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / total;
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let median = weighted_quantile_sorted(&values, &weights, &order, 0.5);
        let qs = quantiles
            .iter()
            .map(|p| weighted_quantile_sorted(&values, &weights, &order, *p))
            .collect();
        stats.push(QuantityStats {
            quantity: q,
            mean,
            median,
            quantiles: qs,
        });
    }
    Ok(DaySummary {
        day_index: cloud.day_index,
        date,
        observed: cloud.observed,
        stats,
    })
}

/// Summarizes a sequence of day clouds. `epoch`, when given, dates each row.
pub fn summarize(
    clouds: &[DayCloud],
    quantiles: &[f64],
    population: u64,
    epoch: Option<NaiveDate>,
) -> Result<TrajectorySummary> {
    let mut summary = TrajectorySummary::new(quantiles.to_vec())?;
    for cloud in clouds {
        let date = epoch.and_then(|e| e.checked_add_signed(chrono::Duration::days(cloud.day_index)));
        summary.push(summarize_cloud(cloud, date, quantiles, population)?);
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

fn quantile_header(p: f64) -> String {
    format!("q{p}")
}

/// Writes the rows for `quantities` (all when `None`) as CSV.
pub fn write_summary_csv<W: Write>(
    summary: &TrajectorySummary,
    quantities: Option<&[Quantity]>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Validation(format!("csv write: {e}"));
    let mut header = vec![
        "day_index".to_string(),
        "date".into(),
        "observed".into(),
        "quantity".into(),
        "mean".into(),
        "median".into(),
    ];
    header.extend(summary.quantiles.iter().map(|p| quantile_header(*p)));
    w.write_record(&header).map_err(err)?;
    for day in &summary.days {
        for s in &day.stats {
            if let Some(qs) = quantities {
                if !qs.contains(&s.quantity) {
                    continue;
                }
            }
            let mut row = vec![
                day.day_index.to_string(),
                day.date.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default(),
                day.observed.to_string(),
                s.quantity.name().to_string(),
                s.mean.to_string(),
                s.median.to_string(),
            ];
            row.extend(s.quantiles.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::Validation(format!("csv write: {e}")))?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(reader: R) -> Result<TrajectorySummary> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 1, message: e.to_string() })?
        .clone();
    let fixed = ["day_index", "date", "observed", "quantity", "mean", "median"];
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(a, b)| a != b) {
        return Err(Error::Parse {
            row: 1,
            message: format!("summary header must start with `{}`", fixed.join(",")),
        });
    }
    let quantiles = header
        .iter()
        .skip(fixed.len())
        .map(|h| {
            h.strip_prefix('q')
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse { row: 1, message: format!("bad quantile column `{h}`") })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut summary = TrajectorySummary::new(quantiles)?;
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let perr = |m: String| Error::Parse { row, message: m };
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| perr(format!("column {}: {e}", &header[i])))
        };
        let day_index: i64 = rec[0].parse().map_err(|e| perr(format!("day_index: {e}")))?;
        let date = if rec[1].is_empty() {
            None
        } else {
            Some(NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d").map_err(|e| perr(format!("date: {e}")))?)
        };
        let observed: bool = rec[2].parse().map_err(|e| perr(format!("observed: {e}")))?;
        let quantity: Quantity = rec[3].parse()?;
        let stats = QuantityStats {
            quantity,
            mean: num(4)?,
            median: num(5)?,
            quantiles: (fixed.len()..header.len()).map(num).collect::<Result<_>>()?,
        };
        match summary.days.last_mut() {
            Some(d) if d.day_index == day_index => d.stats.push(stats),
            _ => summary.days.push(DaySummary {
                day_index,
                date,
                observed,
                stats: vec![stats],
            }),
        }
    }
    Ok(summary)
}

pub fn export_summary(summary: &TrajectorySummary, format: ExportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        ExportFormat::Csv => write_summary_csv(summary, None, &mut out)?,
        ExportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, summary)
                .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn import_summary(format: ExportFormat, path: impl AsRef<Path>) -> Result<TrajectorySummary> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        ExportFormat::Csv => read_summary_csv(file),
        ExportFormat::Json => serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Parse { row: e.line(), message: e.to_string() }),
    }
}

pub const SNAPSHOT_HEADER: [&str; 15] = [
    "day_index", "date", "observed", "particle", "weight", "c", "E", "I", "R", "D", "alpha", "beta", "lambda", "gamma",
    "phi_f",
];

/// Writes particle clouds, one row per particle per day.
pub fn write_snapshots_csv<W: Write>(clouds: &[DayCloud], epoch: Option<NaiveDate>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Validation(format!("csv write: {e}"));
    w.write_record(SNAPSHOT_HEADER).map_err(err)?;
    for cloud in clouds {
        let date = epoch
            .and_then(|e| e.checked_add_signed(chrono::Duration::days(cloud.day_index)))
            .map(|d| d.format("%Y-%m-%d").to_string())
            .unwrap_or_default();
        for (k, p) in cloud.particles.iter().enumerate() {
            let mut row = vec![
                cloud.day_index.to_string(),
                date.clone(),
                cloud.observed.to_string(),
                k.to_string(),
                p.weight.to_string(),
            ];
            row.extend(p.state.to_array().iter().map(|v| v.to_string()));
            row.extend(p.params.to_array().iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::Validation(format!("csv write: {e}")))?;
    Ok(())
}

/// Reads clouds written by [`write_snapshots_csv`]; also returns the epoch
/// implied by the first dated row.
pub fn read_snapshots_csv<R: Read>(reader: R) -> Result<(Vec<DayCloud>, Option<NaiveDate>)> {
    use crate::model::{CompartmentState, ParamVector};

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 1, message: e.to_string() })?
        .clone();
    if header.iter().ne(SNAPSHOT_HEADER) {
        return Err(Error::Parse {
            row: 1,
            message: format!("expected header `{}`", SNAPSHOT_HEADER.join(",")),
        });
    }
    let mut clouds: Vec<DayCloud> = Vec::new();
    let mut epoch = None;
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
        let perr = |m: String| Error::Parse { row, message: m };
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| perr(format!("{}: {e}", SNAPSHOT_HEADER[i])))
        };
        let day_index: i64 = rec[0].parse().map_err(|e| perr(format!("day_index: {e}")))?;
        if epoch.is_none() && !rec[1].is_empty() {
            let date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d").map_err(|e| perr(format!("date: {e}")))?;
            epoch = date.checked_sub_signed(chrono::Duration::days(day_index));
        }
        let observed: bool = rec[2].parse().map_err(|e| perr(format!("observed: {e}")))?;
        let v: Vec<f64> = (4..15).map(num).collect::<Result<_>>()?;
        let particle = Particle {
            weight: v[0],
            state: CompartmentState::new(v[1], v[2], v[3], v[4], v[5]),
            params: ParamVector::new(v[6], v[7], v[8], v[9], v[10]),
        };
        match clouds.last_mut() {
            Some(c) if c.day_index == day_index => c.particles.push(particle),
            Some(c) if c.day_index > day_index => {
                return Err(perr(format!("day {day_index} follows day {}", c.day_index)))
            }
            _ => clouds.push(DayCloud {
                day_index,
                observed,
                particles: vec![particle],
            }),
        }
    }
    Ok((clouds, epoch))
}
