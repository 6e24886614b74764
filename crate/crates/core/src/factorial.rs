//! Replicated 2³ full-factorial experiments on the closed loop, effect
//! contrasts and influence percentages, and the measurement factor
//! `MF = data * influence / 100`.
//!
//! Cells are indexed `4 C + 2 B + A`, which is also the row order of the
//! published tables.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::controllers::ControllerParams;
use crate::error::{invalid_param, Error, Result};
use crate::simloop::{metrics, simulate, FactorLevels, ResponseMetrics, SimConfig};

/// Effect labels in report order.
pub const EFFECTS: [&str; 7] = ["A", "B", "AB", "C", "AC", "BC", "ABC"];

/// Factor mask of each effect, bit 0 = A, bit 1 = B, bit 2 = C.
const EFFECT_MASKS: [usize; 7] = [0b001, 0b010, 0b011, 0b100, 0b101, 0b110, 0b111];

/// Response analysed by the factorial design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ise,
    StepStd,
    #[serde(rename = "u_mean")]
    ControlMean,
    #[serde(rename = "u_std")]
    ControlStd,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Ise, Metric::StepStd, Metric::ControlMean, Metric::ControlStd];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ise => "ise",
            Metric::StepStd => "step_std",
            Metric::ControlMean => "u_mean",
            Metric::ControlStd => "u_std",
        }
    }

    pub fn of(self, m: &ResponseMetrics) -> f64 {
        match self {
            Metric::Ise => m.ise,
            Metric::StepStd => m.step_std,
            Metric::ControlMean => m.control_mean,
            Metric::ControlStd => m.control_std,
        }
    }
}

/// Index `4 C + 2 B + A` of a level combination.
pub fn cell_index(f: FactorLevels) -> usize {
    4 * f.c_disturbance as usize + 2 * f.b_noise as usize + f.a_gain_uncertainty as usize
}

/// Level combination of a cell index.
pub fn cell_levels(index: usize) -> FactorLevels {
    FactorLevels::all()[index]
}

fn coded(cell: usize, mask: usize) -> f64 {
    // product of +-1 codes over the factors in `mask`
    if (!cell & mask).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// The active cell of an effect: its own factors high, all others low.
pub fn effect_cell(effect: usize) -> FactorLevels {
    cell_levels(EFFECT_MASKS[effect])
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise seed of replicate `r` of cell `f`.
pub fn replicate_seed(base: u64, f: FactorLevels, replicate: usize) -> u64 {
    base ^ splitmix64(((replicate as u64) << 3) | cell_index(f) as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorialRow {
    pub levels: FactorLevels,
    pub replicate: usize,
    pub seed: u64,
    pub metrics: ResponseMetrics,
}

/// Complete replicated design, rows ordered by cell then replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorialTable {
    pub replicates: usize,
    pub rows: Vec<FactorialRow>,
}

impl FactorialTable {
    /// Checks completeness and puts rows into canonical order.
    pub fn from_rows(mut rows: Vec<FactorialRow>) -> Result<Self> {
        let mut counts = [0usize; 8];
        for r in &rows {
            r.levels.validate()?;
            counts[cell_index(r.levels)] += 1;
        }
        let replicates = counts[0];
        if replicates == 0 || counts.iter().any(|c| *c != replicates) {
            return Err(Error::InvalidInput(format!("incomplete design, rows per cell {counts:?}")));
        }
        rows.sort_by_key(|r| (cell_index(r.levels), r.replicate));
        Ok(Self { replicates, rows })
    }

    /// `(cell index, response)` pairs for one metric.
    pub fn responses(&self, metric: Metric) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .map(|r| (cell_index(r.levels), metric.of(&r.metrics)))
            .collect()
    }

    pub fn cell_means(&self, metric: Metric) -> [f64; 8] {
        let mut sum = [0.0; 8];
        for (cell, y) in self.responses(metric) {
            sum[cell] += y;
        }
        sum.map(|s| s / self.replicates as f64)
    }

    /// Columns `C,B,A,replicate,ise,step_std,u_mean,u_std`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["C", "B", "A", "replicate", "ise", "step_std", "u_mean", "u_std"])?;
        for r in &self.rows {
            let f = r.levels;
            let mut rec = vec![
                f.c_disturbance.to_string(),
                f.b_noise.to_string(),
                f.a_gain_uncertainty.to_string(),
                r.replicate.to_string(),
            ];
            rec.extend(Metric::ALL.iter().map(|m| m.of(&r.metrics).to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

pub fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Simulates every cell `replicates` times in parallel.
///
/// Replicate `r` of each cell gets its own noise seed derived from
/// `base.seed`; the first failing cell aborts the run.
pub fn run_design(controller: &ControllerParams, base: &SimConfig, replicates: usize) -> Result<FactorialTable> {
    if replicates == 0 {
        return Err(invalid_param("at least one replicate is required"));
    }
    base.validate()?;
    let jobs: Vec<(FactorLevels, usize)> = FactorLevels::all()
        .into_iter()
        .flat_map(|f| (0..replicates).map(move |r| (f, r)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(f, r)| {
            let seed = replicate_seed(base.seed, f, r);
            let config = SimConfig {
                factors: f,
                seed,
                ..base.clone()
            };
            let wrap = |e: Error| Error::Cell {
                a: f.a_gain_uncertainty,
                b: f.b_noise,
                c: f.c_disturbance,
                replicate: r,
                source: Box::new(e),
            };
            let trace = simulate(controller, &config).map_err(wrap)?;
            let m = metrics(&trace).map_err(wrap)?;
            Ok(FactorialRow {
                levels: f,
                replicate: r,
                seed,
                metrics: m,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FactorialTable::from_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectStat {
    pub effect: String,
    pub contrast: f64,
    pub sum_of_squares: f64,
    pub percentage: f64,
    /// `None` without replication or when the pure error vanishes.
    pub f_statistic: Option<f64>,
    pub p_value: Option<f64>,
}

/// Effect decomposition of one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEntry {
    pub metric: String,
    pub effects: Vec<EffectStat>,
    pub pure_error_ss: f64,
    pub error_df: usize,
    /// Set when every effect sum of squares is zero; percentages are then 0.
    pub degenerate: bool,
}

impl InfluenceEntry {
    pub fn percentages(&self) -> [f64; 7] {
        std::array::from_fn(|i| self.effects[i].percentage)
    }
}

/// Contrasts, sums of squares and influence percentages from
/// `(cell index, response)` observations of a balanced design.
pub fn effect_analysis(metric: &str, data: &[(usize, f64)]) -> Result<InfluenceEntry> {
    let mut counts = [0usize; 8];
    let mut sums = [0.0; 8];
    for &(cell, y) in data {
        if cell >= 8 {
            return Err(Error::InvalidInput(format!("cell index {cell} out of range")));
        }
        if !y.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite response {y}")));
        }
        counts[cell] += 1;
        sums[cell] += y;
    }
    let r = counts[0];
    if r == 0 || counts.iter().any(|c| *c != r) {
        return Err(Error::InvalidInput(format!("incomplete design, rows per cell {counts:?}")));
    }
    let n = (8 * r) as f64;
    let contrasts: [f64; 7] = std::array::from_fn(|e| {
        data.iter().map(|&(cell, y)| coded(cell, EFFECT_MASKS[e]) * y).sum()
    });
    let ss: [f64; 7] = contrasts.map(|c| c * c / n);
    let total: f64 = ss.iter().sum();
    let scale: f64 = data.iter().map(|(_, y)| y * y).sum();
    let degenerate = !(total > 1e-28 * scale);

    let means = sums.map(|s| s / r as f64);
    let pure_error_ss: f64 = data.iter().map(|&(cell, y)| (y - means[cell]).powi(2)).sum();
    let error_df = 8 * (r - 1);
    let ms_error = pure_error_ss / error_df.max(1) as f64;
    let f_dist = (error_df > 0)
        .then(|| FisherSnedecor::new(1.0, error_df as f64).ok())
        .flatten();

    let effects = (0..7)
        .map(|e| {
            let percentage = if degenerate { 0.0 } else { 100.0 * ss[e] / total };
            let f_statistic = (f_dist.is_some() && ms_error > 0.0).then(|| ss[e] / ms_error);
            let p_value = f_statistic.zip(f_dist.as_ref()).map(|(f, d)| d.sf(f));
            EffectStat {
                effect: EFFECTS[e].to_string(),
                contrast: contrasts[e],
                sum_of_squares: ss[e],
                percentage,
                f_statistic,
                p_value,
            }
        })
        .collect();
    Ok(InfluenceEntry {
        metric: metric.to_string(),
        effects,
        pure_error_ss,
        error_df,
        degenerate,
    })
}

pub fn influence(table: &FactorialTable, metric: Metric) -> Result<InfluenceEntry> {
    effect_analysis(metric.name(), &table.responses(metric))
}

/// Influence of every effect on every metric.
pub fn influence_report(table: &FactorialTable) -> Result<Vec<InfluenceEntry>> {
    Metric::ALL.iter().map(|m| influence(table, *m)).collect()
}

/// Columns `metric,effect,percentage,sum_of_squares,f_statistic,p_value`.
pub fn write_influence_csv<W: Write>(entries: &[InfluenceEntry], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["metric", "effect", "percentage", "sum_of_squares", "f_statistic", "p_value"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in entries {
        for s in &e.effects {
            w.write_record([
                e.metric.clone(),
                s.effect.clone(),
                s.percentage.to_string(),
                s.sum_of_squares.to_string(),
                opt(s.f_statistic),
                opt(s.p_value),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `data * influence_pct / 100`.
pub fn measurement_factor(data: f64, influence_pct: f64) -> f64 {
    data * influence_pct / 100.0
}

/// Measurement factor of one effect on one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfEntry {
    pub controller: String,
    pub metric: String,
    pub effect: String,
    /// Cell whose response is weighted: the effect's factors high, the rest low.
    pub cell: FactorLevels,
    pub data: f64,
    pub influence_pct: f64,
    pub mf: f64,
}

/// MF of each effect from per-cell responses and effect percentages.
pub fn mf_matrix(controller: &str, metric: &str, cells: &[f64; 8], pct: &[f64; 7]) -> Vec<MfEntry> {
    (0..7)
        .map(|e| {
            let cell = effect_cell(e);
            let data = cells[cell_index(cell)];
            MfEntry {
                controller: controller.to_string(),
                metric: metric.to_string(),
                effect: EFFECTS[e].to_string(),
                cell,
                data,
                influence_pct: pct[e],
                mf: measurement_factor(data, pct[e]),
            }
        })
        .collect()
}

/// Columns `controller,metric,effect,C,B,A,data,influence_pct,mf`.
pub fn write_mf_csv<W: Write>(entries: &[MfEntry], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["controller", "metric", "effect", "C", "B", "A", "data", "influence_pct", "mf"])?;
    for m in entries {
        w.write_record([
            m.controller.clone(),
            m.metric.clone(),
            m.effect.clone(),
            m.cell.c_disturbance.to_string(),
            m.cell.b_noise.to_string(),
            m.cell.a_gain_uncertainty.to_string(),
            m.data.to_string(),
            m.influence_pct.to_string(),
            m.mf.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Published per-cell responses of one controller; rows in cell order,
/// columns ISE, output SD, control mean, control SD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedCells {
    pub controller: &'static str,
    pub rows: [[f64; 4]; 8],
}

impl PublishedCells {
    pub fn column(&self, metric: Metric) -> [f64; 8] {
        let j = Metric::ALL.iter().position(|m| *m == metric).unwrap();
        self.rows.map(|r| r[j])
    }
}

pub fn published_cells() -> [PublishedCells; 3] {
    [
        PublishedCells {
            controller: "FOPID",
            rows: [
                [0.49, 0.13, 0.11, 0.208],
                [0.49, 0.13, 0.11, 0.208],
                [0.73, 0.15, 0.292, 0.21],
                [0.81, 0.163, 0.323, 0.29],
                [0.77, 0.161, 0.252, 0.219],
                [0.76, 0.158, 0.366, 0.293],
                [0.81, 0.163, 0.323, 0.294],
                [0.59, 0.141, 0.169, 0.263],
            ],
        },
        PublishedCells {
            controller: "IOPID",
            rows: [
                [0.867, 0.172, 0.296, 0.438],
                [0.866, 0.170, 0.720, 0.743],
                [0.536, 0.137, 0.155, 0.437],
                [0.826, 0.168, 0.337, 0.433],
                [0.867, 0.172, 0.296, 0.438],
                [0.913, 0.175, 0.667, 0.739],
                [0.913, 0.175, 0.667, 0.739],
                [0.826, 0.168, 0.337, 0.433],
            ],
        },
        PublishedCells {
            controller: "SIMC PID",
            rows: [
                [3.67, 0.352, 0.403, 0.555],
                [1.562, 0.230, 0.762, 0.620],
                [1.597, 0.232, 0.733, 0.629],
                [1.976, 0.257, 1.699, 1.148],
                [1.976, 0.257, 1.699, 1.148],
                [4.639, 0.393, 1.136, 1.041],
                [1.976, 0.257, 1.699, 1.148],
                [1.944, 0.256, 1.816, 1.173],
            ],
        },
    ]
}

/// Published influence percentages in [`EFFECTS`] order.
pub fn published_influence(controller: &str, metric: Metric) -> Option<[f64; 7]> {
    // columns: FOPID, SIMC PID, IOPID for each metric in Metric::ALL order
    const TABLE: [[f64; 12]; 7] = [
        [45.761, 60.561, 39.534, 46.368, 62.801, 40.994, 47.567, 9.505, 10.329, 1.592, 1.562, 0.011],
        [22.089, 0.006, 32.512, 18.641, 0.000, 29.110, 30.478, 83.708, 84.623, 93.456, 97.416, 99.904],
        [12.026, 8.513, 7.134, 14.654, 7.547, 7.487, 0.660, 0.865, 0.177, 2.084, 0.182, 0.013],
        [10.141, 2.730, 17.213, 11.215, 4.629, 19.482, 2.732, 0.000, 0.341, 0.485, 0.001, 0.030],
        [3.099, 9.419, 1.173, 2.845, 8.523, 1.103, 9.099, 2.529, 2.238, 0.626, 0.332, 0.012],
        [3.572, 9.401, 1.320, 3.130, 8.356, 0.942, 4.501, 1.183, 1.007, 0.396, 0.103, 0.000],
        [3.312, 9.370, 1.115, 3.147, 8.143, 0.881, 4.962, 2.209, 1.286, 1.362, 0.404, 0.029],
    ];
    let col = match controller.to_ascii_uppercase().as_str() {
        "FOPID" => 0,
        "SIMC PID" | "SIMC" => 1,
        "IOPID" => 2,
        _ => return None,
    };
    let m = Metric::ALL.iter().position(|x| *x == metric)?;
    Some(std::array::from_fn(|e| TABLE[e][3 * m + col]))
}

/// Influence recomputed from the published cell values next to the
/// published percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub controller: String,
    pub computed: InfluenceEntry,
    pub published: [f64; 7],
    pub max_abs_difference: f64,
}

/// Runs [`effect_analysis`] on each published table column (one
/// observation per cell) for side-by-side comparison.
pub fn replay_published_tables() -> Result<Vec<ReplayEntry>> {
    let mut out = Vec::new();
    for t in published_cells() {
        for m in Metric::ALL {
            let data: Vec<(usize, f64)> = t.column(m).into_iter().enumerate().collect();
            let computed = effect_analysis(m.name(), &data)?;
            let published = published_influence(t.controller, m).expect("embedded table");
            let max_abs_difference = computed
                .percentages()
                .iter()
                .zip(&published)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            out.push(ReplayEntry {
                controller: t.controller.to_string(),
                computed,
                published,
                max_abs_difference,
            });
        }
    }
    Ok(out)
}

/// MF of every controller, metric and effect from the published tables.
pub fn published_mf_matrices() -> Vec<MfEntry> {
    published_cells()
        .iter()
        .flat_map(|t| {
            Metric::ALL.into_iter().flat_map(move |m| {
                let pct = published_influence(t.controller, m).expect("embedded table");
                mf_matrix(t.controller, m.name(), &t.column(m), &pct)
            })
        })
        .collect()
}

/// Columns `controller,metric,effect,computed,published`.
pub fn write_replay_csv<W: Write>(entries: &[ReplayEntry], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["controller", "metric", "effect", "computed", "published"])?;
    for r in entries {
        for (s, p) in r.computed.effects.iter().zip(&r.published) {
            w.write_record([
                r.controller.clone(),
                r.computed.metric.clone(),
                s.effect.clone(),
                s.percentage.to_string(),
                p.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
