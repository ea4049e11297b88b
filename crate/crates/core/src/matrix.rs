//! Probability-of-detection matrices: prepared states (rows) against
//! measurement pairs (columns), one array per sign branch.
//!
//! Rows are the canonical patterns in ascending binary order of their free
//! bits; columns are pairs in lexicographic slot order (see
//! [`ModeIndexSet::pairs`]). A *sampled* matrix instead lists one cell per
//! entry: `state_labels[k]`, `setting_labels[k]` and the one-element rows
//! `probs_plus[k]`, `probs_minus[k]`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, PreparedChannel};
use crate::error::{check_probability, Error, Result};
use crate::modes::{make_projector, prepare_state, ModeIndexSet, ModePair, PhasePattern, Sign};

pub const FORMAT_VERSION: u32 = 1;

/// Largest dimension for which a full matrix is materialized.
pub const MAX_FULL_DIM: usize = 12;
/// Largest dimension [`analytic_qber`] will stream through.
pub const MAX_STREAM_DIM: usize = 20;
/// Largest dimension supported by cell sampling (cell indices must fit in `u128`).
pub const MAX_SAMPLE_DIM: usize = 64;

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatrix {
    pub format_version: u32,
    #[serde(rename = "L")]
    pub dim: usize,
    pub channel: String,
    #[serde(default)]
    pub p_bg: f64,
    pub state_labels: Vec<String>,
    pub setting_labels: Vec<String>,
    pub probs_plus: Vec<Vec<f64>>,
    pub probs_minus: Vec<Vec<f64>>,
    pub sampled: bool,
    pub n_samples: Option<u64>,
    pub seed: Option<u64>,
}

/// One (state, setting) entry with both branch probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub pattern: PhasePattern,
    pub pair: ModePair,
    pub p_plus: f64,
    pub p_minus: f64,
}

fn parse_pair(idx: &ModeIndexSet, s: &str) -> Result<ModePair> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::Format(format!("bad setting label {s:?}")))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<i32>()
            .map_err(|_| Error::Format(format!("bad setting label {s:?}")))
    };
    ModePair::new(idx, parse(a)?, parse(b)?)
}

/// Rounds to 12 significant digits.
pub fn round_sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

impl DetectionMatrix {
    pub fn index_set(&self) -> Result<ModeIndexSet> {
        ModeIndexSet::new(self.dim)
    }

    pub fn n_cells(&self) -> usize {
        self.probs_plus.iter().map(Vec::len).sum()
    }

    /// Checks shapes, probability ranges and (for full matrices) the row/column ordering.
    pub fn validate(&self) -> Result<()> {
        let idx = self.index_set()?;
        let rows = self.probs_plus.len();
        if self.probs_minus.len() != rows || self.state_labels.len() != rows {
            return Err(Error::Format("row counts disagree".into()));
        }
        if self.sampled {
            if self.setting_labels.len() != rows {
                return Err(Error::Format("sampled matrix needs one setting label per cell".into()));
            }
            if self.n_samples != Some(rows as u64) {
                return Err(Error::Format("n_samples disagrees with cell count".into()));
            }
        } else {
            if rows as u128 != PhasePattern::canonical_count(self.dim)
                || self.setting_labels.len() != idx.pair_count()
            {
                return Err(Error::Format(format!(
                    "full matrix for L={} must be {} x {}",
                    self.dim,
                    PhasePattern::canonical_count(self.dim),
                    idx.pair_count()
                )));
            }
            for (i, label) in self.state_labels.iter().enumerate() {
                let p = PhasePattern::from_bitstring(label)?;
                if p.len() != self.dim || !p.is_canonical() || p.canonical_index() != i as u128 {
                    return Err(Error::Format(format!("state label {label:?} out of order")));
                }
            }
            for (j, label) in self.setting_labels.iter().enumerate() {
                if idx.pair_index(&parse_pair(&idx, label)?) != Some(j) {
                    return Err(Error::Format(format!("setting label {label:?} out of order")));
                }
            }
        }
        let width = if self.sampled { 1 } else { self.setting_labels.len() };
        for (rp, rm) in self.probs_plus.iter().zip(&self.probs_minus) {
            if rp.len() != width || rm.len() != width {
                return Err(Error::Format("ragged probability rows".into()));
            }
            for (&a, &b) in rp.iter().zip(rm) {
                check_probability("p_plus", a)?;
                check_probability("p_minus", b)?;
                if a + b > 1.0 + PROB_TOL {
                    return Err(Error::ProbabilityOverflow(a + b));
                }
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Result<Vec<Cell>> {
        let idx = self.index_set()?;
        let mut out = Vec::with_capacity(self.n_cells());
        if self.sampled {
            for k in 0..self.probs_plus.len() {
                out.push(Cell {
                    pattern: PhasePattern::from_bitstring(&self.state_labels[k])?,
                    pair: parse_pair(&idx, &self.setting_labels[k])?,
                    p_plus: self.probs_plus[k][0],
                    p_minus: self.probs_minus[k][0],
                });
            }
        } else {
            let pairs = self
                .setting_labels
                .iter()
                .map(|s| parse_pair(&idx, s))
                .collect::<Result<Vec<_>>>()?;
            for (i, label) in self.state_labels.iter().enumerate() {
                let pattern = PhasePattern::from_bitstring(label)?;
                for (j, pair) in pairs.iter().enumerate() {
                    out.push(Cell {
                        pattern: pattern.clone(),
                        pair: *pair,
                        p_plus: self.probs_plus[i][j],
                        p_minus: self.probs_minus[i][j],
                    });
                }
            }
        }
        Ok(out)
    }

    /// Branch probabilities for a state and pair; full matrices only.
    pub fn lookup(&self, pattern: &PhasePattern, pair: &ModePair) -> Option<(f64, f64)> {
        if self.sampled {
            return None;
        }
        let idx = self.index_set().ok()?;
        let row = usize::try_from(pattern.canonical_index()).ok()?;
        let col = idx.pair_index(pair)?;
        Some((*self.probs_plus.get(row)?.get(col)?, *self.probs_minus.get(row)?.get(col)?))
    }

    /// Swaps the two sign branches.
    pub fn swapped(&self) -> Self {
        let mut m = self.clone();
        std::mem::swap(&mut m.probs_plus, &mut m.probs_minus);
        m
    }

    fn rounded(&self) -> Self {
        let round = |rows: &[Vec<f64>]| {
            rows.iter()
                .map(|r| r.iter().copied().map(round_sig12).collect())
                .collect()
        };
        Self {
            probs_plus: round(&self.probs_plus),
            probs_minus: round(&self.probs_minus),
            p_bg: round_sig12(self.p_bg),
            ..self.clone()
        }
    }

    /// JSON document with one matrix row per line; numbers carry 12 significant digits.
    pub fn to_json_string(&self) -> String {
        let m = self.rounded();
        let js = |v: &dyn erased::Json| v.json();
        let rows = |rows: &[Vec<f64>]| {
            if rows.is_empty() {
                return "[]".to_string();
            }
            let body: Vec<String> = rows.iter().map(|r| format!("    {}", js(r))).collect();
            format!("[\n{}\n  ]", body.join(",\n"))
        };
        let mut s = String::new();
        s.push_str("{\n");
        let _ = writeln!(s, "  \"format_version\": {},", m.format_version);
        let _ = writeln!(s, "  \"L\": {},", m.dim);
        let _ = writeln!(s, "  \"channel\": {},", js(&m.channel));
        let _ = writeln!(s, "  \"p_bg\": {},", js(&m.p_bg));
        let _ = writeln!(s, "  \"state_labels\": {},", js(&m.state_labels));
        let _ = writeln!(s, "  \"setting_labels\": {},", js(&m.setting_labels));
        let _ = writeln!(s, "  \"probs_plus\": {},", rows(&m.probs_plus));
        let _ = writeln!(s, "  \"probs_minus\": {},", rows(&m.probs_minus));
        let _ = writeln!(s, "  \"sampled\": {},", m.sampled);
        let _ = writeln!(s, "  \"n_samples\": {},", js(&m.n_samples));
        let _ = writeln!(s, "  \"seed\": {}", js(&m.seed));
        s.push_str("}\n");
        s
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format_version {}",
                m.format_version
            )));
        }
        m.validate()?;
        Ok(m)
    }

    /// Long-form CSV: `state,setting,p_plus,p_minus`, plus branch first.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut s = String::from("state,setting,p_plus,p_minus\n");
        for c in self.cells()? {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                c.pattern,
                c.pair,
                round_sig12(c.p_plus),
                round_sig12(c.p_minus)
            );
        }
        Ok(s)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

mod erased {
    pub trait Json {
        fn json(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn json(&self) -> String {
            serde_json::to_string(self).expect("plain data serializes")
        }
    }
}

/// Independent background sources combined into one click floor.
pub fn combine_background(a: f64, b: f64) -> f64 {
    1.0 - (1.0 - a) * (1.0 - b)
}

/// Adds setting-independent background clicks, split evenly between the ports.
pub fn with_background(p_plus: f64, p_minus: f64, p_bg: f64) -> (f64, f64) {
    let bg = p_bg * (1.0 - p_plus - p_minus).max(0.0);
    (p_plus + 0.5 * bg, p_minus + 0.5 * bg)
}

/// Per-cell probabilities under a channel model.
enum CellSource<'a> {
    Model {
        idx: ModeIndexSet,
        channel: PreparedChannel<'a>,
        p_bg: f64,
    },
    Table(&'a DetectionMatrix),
}

/// Analytic channel output for one prepared state, ready to be projected.
struct RowModel {
    rho: crate::channel::DensityMatrix,
    survival: f64,
    p_bg: f64,
}

impl RowModel {
    fn cell(&self, pair: &ModePair) -> (f64, f64) {
        let plus = self.rho.expectation(&make_projector(&pair.branch(Sign::Plus)));
        let minus = self.rho.expectation(&make_projector(&pair.branch(Sign::Minus)));
        with_background(
            self.survival * plus.clamp(0.0, 1.0),
            self.survival * minus.clamp(0.0, 1.0),
            self.p_bg,
        )
    }
}

impl<'a> CellSource<'a> {
    fn new(dim: usize, channel: &'a ChannelModel, p_bg: f64) -> Result<Self> {
        check_probability("p_bg", p_bg)?;
        let idx = ModeIndexSet::new(dim)?;
        match channel {
            ChannelModel::Empirical(m) => {
                if m.dim != dim || m.sampled {
                    return Err(Error::Format(format!(
                        "empirical channel needs a full L={dim} matrix"
                    )));
                }
                Ok(CellSource::Table(m))
            }
            _ => Ok(CellSource::Model {
                channel: channel.prepare(&idx)?,
                idx,
                p_bg,
            }),
        }
    }

    fn row(&self, pattern: &PhasePattern) -> Result<Option<RowModel>> {
        match self {
            CellSource::Model { idx, channel, p_bg } => {
                let psi = prepare_state(pattern, idx)?;
                let out = channel.expected_density(&psi)?;
                Ok(Some(RowModel {
                    rho: out.rho,
                    survival: out.survival,
                    p_bg: combine_background(out.p_bg, *p_bg),
                }))
            }
            CellSource::Table(_) => Ok(None),
        }
    }

    fn cell(&self, row: &Option<RowModel>, pattern: &PhasePattern, pair: &ModePair) -> (f64, f64) {
        match (self, row) {
            (_, Some(r)) => r.cell(pair),
            (CellSource::Table(m), None) => m.lookup(pattern, pair).expect("validated table"),
            _ => unreachable!("model rows are always materialized"),
        }
    }
}

/// Full probability-of-detection matrix for `dim ≤ 12`.
///
/// Stochastic channels enter through their exact ensemble average.
pub fn build_matrix(dim: usize, channel: &ChannelModel, p_bg: f64) -> Result<DetectionMatrix> {
    if dim > MAX_FULL_DIM {
        return Err(Error::ResourceLimit(format!(
            "full enumeration is limited to L <= {MAX_FULL_DIM}; use sampling for L = {dim}"
        )));
    }
    let source = CellSource::new(dim, channel, p_bg)?;
    let idx = ModeIndexSet::new(dim)?;
    let pairs: Vec<ModePair> = idx.pairs().collect();
    let patterns: Vec<PhasePattern> = PhasePattern::all_canonical(dim).collect();

    let rows = patterns
        .par_iter()
        .map(|pattern| {
            let row = source.row(pattern)?;
            Ok(pairs
                .iter()
                .map(|pair| source.cell(&row, pattern, pair))
                .unzip::<_, _, Vec<f64>, Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let (probs_plus, probs_minus) = rows.into_iter().unzip();

    Ok(DetectionMatrix {
        format_version: FORMAT_VERSION,
        dim,
        channel: channel.to_string(),
        p_bg,
        state_labels: patterns.iter().map(ToString::to_string).collect(),
        setting_labels: pairs.iter().map(ToString::to_string).collect(),
        probs_plus,
        probs_minus,
        sampled: false,
        n_samples: None,
        seed: None,
    })
}

/// `2^(L-1) · L(L-1)/2`.
pub fn total_cells(dim: usize) -> Result<u128> {
    if dim > MAX_SAMPLE_DIM {
        return Err(Error::ResourceLimit(format!(
            "cell indexing is limited to L <= {MAX_SAMPLE_DIM}"
        )));
    }
    let idx = ModeIndexSet::new(dim)?;
    Ok(PhasePattern::canonical_count(dim) * idx.pair_count() as u128)
}

/// `n` distinct cells drawn uniformly without replacement (Floyd's algorithm),
/// listed in ascending cell order `row · n_pairs + column`.
pub fn sample_matrix(
    dim: usize,
    n: u64,
    channel: &ChannelModel,
    p_bg: f64,
    seed: u64,
) -> Result<DetectionMatrix> {
    let total = total_cells(dim)?;
    if n == 0 || n as u128 > total {
        return Err(Error::Domain {
            name: "samples",
            value: n as f64,
            domain: "1 <= n <= 2^(L-1) L(L-1)/2",
        });
    }
    let source = CellSource::new(dim, channel, p_bg)?;
    let idx = ModeIndexSet::new(dim)?;
    let n_pairs = idx.pair_count() as u128;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = BTreeSet::new();
    for j in (total - n as u128)..total {
        let t = rng.random_range(0..=j);
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    let cells: Vec<u128> = chosen.into_iter().collect();

    let computed = cells
        .par_iter()
        .map(|&c| {
            let pattern = PhasePattern::from_canonical_index(dim, c / n_pairs)?;
            let pair = idx.pair_at((c % n_pairs) as usize).expect("column in range");
            let row = source.row(&pattern)?;
            let (p, m) = source.cell(&row, &pattern, &pair);
            Ok((pattern.to_string(), pair.to_string(), p, m))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut m = DetectionMatrix {
        format_version: FORMAT_VERSION,
        dim,
        channel: channel.to_string(),
        p_bg,
        state_labels: Vec::with_capacity(cells.len()),
        setting_labels: Vec::with_capacity(cells.len()),
        probs_plus: Vec::with_capacity(cells.len()),
        probs_minus: Vec::with_capacity(cells.len()),
        sampled: true,
        n_samples: Some(n),
        seed: Some(seed),
    };
    for (s, pair, p, q) in computed {
        m.state_labels.push(s);
        m.setting_labels.push(pair);
        m.probs_plus.push(vec![p]);
        m.probs_minus.push(vec![q]);
    }
    Ok(m)
}

/// Click-weighted error fraction: wrong-branch probability over total click probability.
///
/// The correct branch is `+` when `s_m ⊕ s_{m-r} = 0` and `-` otherwise.
pub fn qber_from_matrix(m: &DetectionMatrix) -> Result<f64> {
    let idx = m.index_set()?;
    let mut wrong = 0.0;
    let mut total = 0.0;
    for c in m.cells()? {
        let parity = c.pattern.parity(&idx, &c.pair)?;
        wrong += if parity { c.p_plus } else { c.p_minus };
        total += c.p_plus + c.p_minus;
    }
    if total <= 0.0 {
        return Err(Error::UndefinedQber);
    }
    Ok(wrong / total)
}

/// QBER over every cell of the full matrix, without materializing it.
pub fn analytic_qber(dim: usize, channel: &ChannelModel, p_bg: f64) -> Result<f64> {
    if dim > MAX_STREAM_DIM {
        return Err(Error::ResourceLimit(format!(
            "streaming QBER is limited to L <= {MAX_STREAM_DIM}"
        )));
    }
    let source = CellSource::new(dim, channel, p_bg)?;
    let idx = ModeIndexSet::new(dim)?;
    let pairs: Vec<ModePair> = idx.pairs().collect();
    let per_row = (0..PhasePattern::canonical_count(dim) as u64)
        .into_par_iter()
        .map(|i| {
            let pattern = PhasePattern::from_canonical_index(dim, i as u128)?;
            let row = source.row(&pattern)?;
            let mut wrong = 0.0;
            let mut total = 0.0;
            for pair in &pairs {
                let (p, m) = source.cell(&row, &pattern, pair);
                wrong += if pattern.parity(&idx, pair)? { p } else { m };
                total += p + m;
            }
            Ok((wrong, total))
        })
        .collect::<Result<Vec<_>>>()?;
    // sequential reduction keeps the result independent of the thread schedule
    let (wrong, total) = per_row
        .into_iter()
        .fold((0.0, 0.0), |acc, (w, t)| (acc.0 + w, acc.1 + t));
    if total <= 0.0 {
        return Err(Error::UndefinedQber);
    }
    Ok(wrong / total)
}
