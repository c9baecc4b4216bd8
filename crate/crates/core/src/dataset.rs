//! Domain types for specimens, datasets, fold splits, and the on-disk format.
//!
//! A dataset file is UTF-8, line-delimited JSON: the first line is a header
//! `{"classes":[...],"d":N}`, every following line one specimen record.
//! Floats are written with 9 significant digits, which round-trips exactly
//! (save ∘ load ∘ save is byte-identical).

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: region count != 3")]
    RegionCount { line: usize },
    #[error("line {line}: histogram dimension {got} != {expected}")]
    DimensionMismatch { line: usize, got: usize, expected: usize },
    #[error("line {line}: unknown cell_type {value:?}")]
    UnknownCellType { line: usize, value: String },
    #[error("line {line}: empty cell list")]
    EmptyCells { line: usize },
    #[error("header must declare at least 2 classes")]
    TooFewClasses,
    #[error("subset_size {subset} exceeds population {population}")]
    SubsetTooLarge { subset: usize, population: usize },
    #[error("{0}")]
    Invalid(String),
}

fn malformed(line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Malformed { line, msg: msg.into() }
}

/// Raw bag-of-words histogram for one cell region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalHistogram {
    pub values: Vec<f64>,
}

impl RegionalHistogram {
    pub fn new(values: Vec<f64>) -> Result<Self, DatasetError> {
        let h = RegionalHistogram { values };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.values.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(DatasetError::Invalid("histogram entries must be finite and >= 0".into()));
        }
        let l1: f64 = self.values.iter().sum();
        if l1 != 0.0 && (l1 - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Invalid(format!(
                "histogram L1 norm {l1} is neither 0 nor 1 (±1e-9)"
            )));
        }
        Ok(())
    }

    /// All-zero histograms are legal but flagged; they lift to the zero vector.
    pub fn is_degenerate(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellType {
    Interphase,
    Mitotic,
}

impl CellType {
    pub fn as_str(self) -> &'static str {
        match self {
            CellType::Interphase => "interphase",
            CellType::Mitotic => "mitotic",
        }
    }

    pub fn parse(s: &str) -> Option<CellType> {
        match s {
            "interphase" => Some(CellType::Interphase),
            "mitotic" => Some(CellType::Mitotic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intensity {
    Weak,
    Strong,
}

impl Intensity {
    pub fn as_str(self) -> &'static str {
        match self {
            Intensity::Weak => "weak",
            Intensity::Strong => "strong",
        }
    }

    pub fn parse(s: &str) -> Option<Intensity> {
        match s {
            "weak" => Some(Intensity::Weak),
            "strong" => Some(Intensity::Strong),
            _ => None,
        }
    }
}

/// One cell: its cycle stage and exactly three regional histograms in
/// whole/inner/outer order.
#[derive(Debug, Clone)]
pub struct Cell {
    pub cell_type: CellType,
    pub regions: [RegionalHistogram; 3],
}

impl Cell {
    pub fn dim(&self) -> usize {
        self.regions[0].dim()
    }
}

/// One of the six (cell type × whole/inner/outer) regions, numbered 1..=6:
/// interphase whole/inner/outer are 1..3, mitotic whole/inner/outer are 4..6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Region(u8);

impl Region {
    pub const COUNT: usize = 6;
    pub const ALL: [Region; 6] =
        [Region(1), Region(2), Region(3), Region(4), Region(5), Region(6)];

    pub fn new(j: usize) -> Option<Region> {
        (1..=6).contains(&j).then_some(Region(j as u8))
    }

    /// 1-based region number.
    pub fn number(self) -> usize {
        self.0 as usize
    }

    /// 0-based position in concatenation order.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn cell_type(self) -> CellType {
        if self.0 <= 3 {
            CellType::Interphase
        } else {
            CellType::Mitotic
        }
    }

    /// 0 = whole, 1 = inner, 2 = outer.
    pub fn slot(self) -> usize {
        (self.0 as usize - 1) % 3
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One specimen: a labelled bag of cells plus intensity metadata.
#[derive(Debug, Clone)]
pub struct SpecimenSample {
    pub id: String,
    pub label: usize,
    pub intensity: Intensity,
    pub cells: Vec<Cell>,
}

impl SpecimenSample {
    pub fn cells_of_type(&self, ty: CellType) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(move |c| c.cell_type == ty)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<SpecimenSample>,
    pub class_names: Vec<String>,
    pub d: usize,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn sample_by_id(&self, id: &str) -> Option<&SpecimenSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn index_of_id(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }
}

/// Train/test id lists for one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    classes: Vec<String>,
    d: usize,
}

#[derive(Serialize, Deserialize)]
struct CellLine {
    cell_type: String,
    regions: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    label: String,
    intensity: String,
    cells: Vec<CellLine>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Dataset, DatasetError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header_text) =
        lines.next().ok_or_else(|| malformed(1, "missing header line"))?;
    let header: HeaderLine = serde_json::from_str(header_text)
        .map_err(|e| malformed(1, format!("bad header: {e}")))?;
    if header.classes.len() < 2 {
        return Err(DatasetError::TooFewClasses);
    }
    let mut d = header.d;
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let rec: RecordLine = serde_json::from_str(line)
            .map_err(|e| malformed(lineno, format!("bad record: {e}")))?;
        let label = header
            .classes
            .iter()
            .position(|c| *c == rec.label)
            .ok_or_else(|| malformed(lineno, format!("label {:?} not in class list", rec.label)))?;
        let intensity = Intensity::parse(&rec.intensity)
            .ok_or_else(|| malformed(lineno, format!("unknown intensity {:?}", rec.intensity)))?;
        if rec.cells.is_empty() {
            return Err(DatasetError::EmptyCells { line: lineno });
        }
        let mut cells = Vec::with_capacity(rec.cells.len());
        for cl in rec.cells {
            let cell_type = CellType::parse(&cl.cell_type)
                .ok_or(DatasetError::UnknownCellType { line: lineno, value: cl.cell_type.clone() })?;
            if cl.regions.len() != 3 {
                return Err(DatasetError::RegionCount { line: lineno });
            }
            let mut regions = Vec::with_capacity(3);
            for values in cl.regions {
                if d == 0 {
                    d = values.len();
                }
                if values.len() != d {
                    return Err(DatasetError::DimensionMismatch {
                        line: lineno,
                        got: values.len(),
                        expected: d,
                    });
                }
                let hist = RegionalHistogram::new(values)
                    .map_err(|e| malformed(lineno, e.to_string()))?;
                regions.push(hist);
            }
            let regions: [RegionalHistogram; 3] =
                regions.try_into().expect("exactly 3 regions checked above");
            cells.push(Cell { cell_type, regions });
        }
        samples.push(SpecimenSample { id: rec.id, label, intensity, cells });
    }
    Ok(Dataset { samples, class_names: header.classes, d })
}

/// Formats a float with 9 significant digits; parsing this back and
/// re-formatting reproduces the same text.
pub fn format_f64(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v:.8e}").expect("formatting f64 cannot fail");
    s
}

fn render_dataset(ds: &Dataset) -> String {
    let mut out = String::new();
    let header = HeaderLine { classes: ds.class_names.clone(), d: ds.d };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for s in &ds.samples {
        // Hand-rolled so float formatting is under our control.
        out.push_str("{\"id\":");
        out.push_str(&serde_json::to_string(&s.id).expect("string"));
        out.push_str(",\"label\":");
        out.push_str(&serde_json::to_string(&ds.class_names[s.label]).expect("string"));
        out.push_str(",\"intensity\":\"");
        out.push_str(s.intensity.as_str());
        out.push_str("\",\"cells\":[");
        for (ci, c) in s.cells.iter().enumerate() {
            if ci > 0 {
                out.push(',');
            }
            out.push_str("{\"cell_type\":\"");
            out.push_str(c.cell_type.as_str());
            out.push_str("\",\"regions\":[");
            for (ri, r) in c.regions.iter().enumerate() {
                if ri > 0 {
                    out.push(',');
                }
                out.push('[');
                for (vi, &v) in r.values.iter().enumerate() {
                    if vi > 0 {
                        out.push(',');
                    }
                    out.push_str(&format_f64(v));
                }
                out.push(']');
            }
            out.push_str("]}");
        }
        out.push_str("]}\n");
    }
    out
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(render_dataset(ds).as_bytes())?;
    w.flush()?;
    Ok(())
}

/// In-memory serialization, used by tests and the byte-determinism checks.
pub fn dataset_to_string(ds: &Dataset) -> String {
    render_dataset(ds)
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

/// Draws `n_folds` random subsets of `subset_size` ids (without replacement
/// within a fold) and splits each into two near-equal halves.
pub fn make_folds(
    dataset: &Dataset,
    n_folds: usize,
    subset_size: usize,
    seed: u64,
) -> Result<FoldPlan, DatasetError> {
    if n_folds == 0 {
        return Err(DatasetError::Invalid("n_folds must be >= 1".into()));
    }
    let population = dataset.samples.len();
    if subset_size > population {
        return Err(DatasetError::SubsetTooLarge { subset: subset_size, population });
    }
    if subset_size == 0 {
        return Err(DatasetError::Invalid("subset_size must be >= 1".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut folds = Vec::with_capacity(n_folds);
    for _ in 0..n_folds {
        let picks = rand::seq::index::sample(&mut rng, population, subset_size);
        let ids: Vec<String> =
            picks.iter().map(|i| dataset.samples[i].id.clone()).collect();
        let test_len = subset_size / 2;
        let train_len = subset_size - test_len;
        let train = ids[..train_len].to_vec();
        let test = ids[train_len..].to_vec();
        debug_assert_eq!(test.len(), test_len);
        folds.push(Fold { train, test });
    }
    Ok(FoldPlan { folds, seed })
}
