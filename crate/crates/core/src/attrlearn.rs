//! Cell-level attribute learning: bases, specimen descriptors, the ARCAD and
//! CRAD training schemes, and their block-coordinate-descent solver.
//!
//! Both schemes minimize a sum of one-vs-all regularized hinge objectives
//! over (a) per-class specimen hyperplanes and (b) per-region banks of linear
//! attribute classifiers. Because the specimen descriptor is an average of
//! per-cell attribute values and the attribute map is linear, the objective
//! collapses to an image-level attribute-discovery problem over the averaged
//! region features x̂ (see `eval_picodes_objective`), which is what the
//! solver alternates on: one-vs-all SVMs with bases frozen, then one weighted
//! hinge update per basis column with the SVMs frozen.

use rand::prelude::*;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{Dataset, Region, SpecimenSample};
use crate::featmap::{average_region_features, lift_slice, LiftConfig};
use crate::linsvm::{
    argmax_class, hinge, ova_train, LinearModel, SvmConfig, SvmError, SvmProblem,
};
use crate::numeric::{derive_seed, dot, norm_sq};

#[derive(Debug, Error)]
pub enum AttrError {
    #[error("need at least 2 classes, got {0}")]
    NotEnoughClasses(usize),
    #[error("attrs_per_region must be >= 1")]
    NoAttributes,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("unknown specimen id {0:?}")]
    UnknownId(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    BadModel(String),
}

/// Dense column-major matrix; columns are individual attribute classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct ColMat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl ColMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ColMat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = ColMat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn set_col(&mut self, c: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        self.col_mut(c).copy_from_slice(values);
    }

    /// Aᵀx: one dot product per column.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "t_matvec dimension mismatch");
        (0..self.cols).map(|c| dot(self.col(c), x)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrMode {
    RealValued,
    Binarized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Arcad,
    Crad,
}

/// Per-region basis matrices; all six regions share the attribute count.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeBases {
    pub lifted_dim: usize,
    pub attrs_per_region: usize,
    pub seed: u64,
    mats: Vec<ColMat>,
}

impl AttributeBases {
    /// Seeded unit-norm Gaussian columns; each region draws from its own
    /// region-derived stream so a region's initial basis does not depend on
    /// which other regions are being trained.
    pub fn random(lifted_dim: usize, attrs_per_region: usize, seed: u64) -> Self {
        let mats = Region::ALL
            .iter()
            .map(|j| {
                let mut rng =
                    StdRng::seed_from_u64(derive_seed(seed, &[TAG_INIT, j.number() as u64]));
                let mut m = ColMat::zeros(lifted_dim, attrs_per_region);
                for c in 0..attrs_per_region {
                    let col = m.col_mut(c);
                    for v in col.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    let n = norm_sq(col).sqrt();
                    if n > 0.0 {
                        for v in col.iter_mut() {
                            *v /= n;
                        }
                    }
                }
                m
            })
            .collect();
        AttributeBases { lifted_dim, attrs_per_region, seed, mats }
    }

    /// Rebuilds bases from deserialized matrices.
    pub fn from_parts(
        lifted_dim: usize,
        attrs_per_region: usize,
        seed: u64,
        mats: Vec<ColMat>,
    ) -> Result<Self, String> {
        if mats.len() != Region::COUNT {
            return Err(format!("expected {} basis matrices, got {}", Region::COUNT, mats.len()));
        }
        if mats.iter().any(|m| m.rows != lifted_dim || m.cols != attrs_per_region) {
            return Err("basis matrix shape mismatch".into());
        }
        Ok(AttributeBases { lifted_dim, attrs_per_region, seed, mats })
    }

    pub fn mat(&self, j: Region) -> &ColMat {
        &self.mats[j.index()]
    }

    pub fn mat_mut(&mut self, j: Region) -> &mut ColMat {
        &mut self.mats[j.index()]
    }

    /// Total attribute count P = 6·b.
    pub fn total_attrs(&self) -> usize {
        Region::COUNT * self.attrs_per_region
    }

    /// Global coordinate p ↔ (region, column) in fixed region order.
    pub fn coord(&self, p: usize) -> (Region, usize) {
        let b = self.attrs_per_region;
        (Region::ALL[p / b], p % b)
    }
}

/// A specimen-level descriptor z: per-region averaged attribute values.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecimenDescriptor {
    pub z: Vec<f64>,
    pub attrs_per_region: usize,
}

impl SpecimenDescriptor {
    pub fn block(&self, j: Region) -> &[f64] {
        let b = self.attrs_per_region;
        &self.z[j.index() * b..(j.index() + 1) * b]
    }
}

/// Attribute values of one region descriptor: Aᵀx, optionally thresholded.
pub fn cell_attribute_values(basis: &ColMat, x: &[f64], mode: AttrMode) -> Vec<f64> {
    let mut h = basis.t_matvec(x);
    if mode == AttrMode::Binarized {
        for v in h.iter_mut() {
            *v = if *v > 0.0 { 1.0 } else { 0.0 };
        }
    }
    h
}

/// Builds z for one specimen.
///
/// Real-valued mode exploits linearity: the per-region mean of Aᵀx over
/// cells equals Aᵀ applied to the mean lifted descriptor, so each block is
/// computed as Aᵀx̂. Binarized mode thresholds per cell before averaging, so
/// it must visit every cell. Regions with no cells of the matching type
/// contribute a zero block.
pub fn specimen_descriptor(
    sample: &SpecimenSample,
    bases: &AttributeBases,
    mode: AttrMode,
    lift: &LiftConfig,
) -> SpecimenDescriptor {
    let b = bases.attrs_per_region;
    let mut z = Vec::with_capacity(Region::COUNT * b);
    for j in Region::ALL {
        match mode {
            AttrMode::RealValued => {
                let xhat = average_region_features(sample, j, lift);
                z.extend(bases.mat(j).t_matvec(&xhat));
            }
            AttrMode::Binarized => {
                let slot = j.slot();
                let mut counts = vec![0.0f64; b];
                let mut n = 0u64;
                for cell in sample.cells_of_type(j.cell_type()) {
                    let lifted = lift_slice(&cell.regions[slot].values, lift);
                    let vals = cell_attribute_values(bases.mat(j), &lifted, AttrMode::Binarized);
                    for (c, v) in counts.iter_mut().zip(&vals) {
                        *c += v; // 0/1 sums are exact in any order
                    }
                    n += 1;
                }
                if n == 0 {
                    z.extend(std::iter::repeat(0.0).take(b));
                } else {
                    z.extend(counts.iter().map(|c| c / n as f64));
                }
            }
        }
    }
    SpecimenDescriptor { z, attrs_per_region: b }
}

// ---------------------------------------------------------------------------
// Objective evaluators
// ---------------------------------------------------------------------------

fn label_sign(label: usize, k: usize) -> f64 {
    if label == k {
        1.0
    } else {
        -1.0
    }
}

/// Literal evaluation of the joint specimen-SVM/attribute objective on raw
/// samples: per-cell attribute values are summed per region, averaged, and
/// scored against each class hyperplane block.
pub fn eval_arcad_objective(
    svms: &[LinearModel],
    bases: &AttributeBases,
    samples: &[&SpecimenSample],
    labels: &[usize],
    lambda: f64,
    lift: &LiftConfig,
) -> f64 {
    let n = samples.len();
    let b = bases.attrs_per_region;
    // per specimen and region: (Σ_c Aᵀ x_c, N_count)
    let region_sums: Vec<Vec<(Vec<f64>, usize)>> = samples
        .iter()
        .map(|s| {
            Region::ALL
                .iter()
                .map(|&j| {
                    let slot = j.slot();
                    let mut sum = vec![0.0; b];
                    let mut count = 0usize;
                    for cell in s.cells_of_type(j.cell_type()) {
                        let lifted = lift_slice(&cell.regions[slot].values, lift);
                        let h = bases.mat(j).t_matvec(&lifted);
                        for (acc, v) in sum.iter_mut().zip(&h) {
                            *acc += v;
                        }
                        count += 1;
                    }
                    (sum, count)
                })
                .collect()
        })
        .collect();
    let mut total = 0.0;
    for (k, svm) in svms.iter().enumerate() {
        let mut loss = 0.0;
        for i in 0..n {
            let y = label_sign(labels[i], k);
            let mut score = svm.b;
            for j in Region::ALL {
                let (sum, count) = &region_sums[i][j.index()];
                if *count == 0 {
                    continue;
                }
                let wj = &svm.w[j.index() * b..(j.index() + 1) * b];
                score += dot(wj, sum) / *count as f64;
            }
            loss += hinge(y * score);
        }
        total += 0.5 * norm_sq(&svm.w) + lambda / n as f64 * loss;
    }
    total
}

/// Literal evaluation of the image-level attribute-discovery objective: each
/// descriptor coordinate p is a scalar SVM weight times the p-th basis
/// column applied to the matching block of the averaged feature u.
pub fn eval_picodes_objective(
    svms: &[LinearModel],
    bases: &AttributeBases,
    u_rows: &[Vec<f64>],
    labels: &[usize],
    lambda: f64,
) -> f64 {
    let n = u_rows.len();
    let dl = bases.lifted_dim;
    let p_total = bases.total_attrs();
    let mut total = 0.0;
    for (k, svm) in svms.iter().enumerate() {
        assert_eq!(svm.w.len(), p_total, "svm dimension must equal J*b");
        let mut loss = 0.0;
        for i in 0..n {
            let y = label_sign(labels[i], k);
            let mut score = svm.b;
            for p in 0..p_total {
                let (j, col) = bases.coord(p);
                let block = &u_rows[i][j.index() * dl..(j.index() + 1) * dl];
                score += svm.w[p] * dot(bases.mat(j).col(col), block);
            }
            loss += hinge(y * score);
        }
        total += 0.5 * norm_sq(&svm.w) + lambda / n as f64 * loss;
    }
    total
}

// ---------------------------------------------------------------------------
// Basis updates
// ---------------------------------------------------------------------------

/// Per-specimen surrogate labels and weights for one basis-column update.
///
/// For column p, with α_{i,k} = y_{i,k}·w_{k,p} and β_{i,k} the rest of the
/// margin, the loss difference D_i = Σ_k ℓ(α+β) − ℓ(β) measures how the
/// specimen's loss moves as the attribute value goes from 0 to 1. The label
/// q_i = +1 when activating the attribute lowers the loss (D_i < 0), and the
/// weight v_i = |D_i|. Specimens with v_i = 0 carry no signal and are
/// skipped.
#[derive(Debug, Clone)]
pub struct BasisUpdateTerms {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl BasisUpdateTerms {
    pub fn all_zero(&self) -> bool {
        self.v.iter().all(|&v| v == 0.0)
    }
}

/// Terms computed from a cached N×P matrix of current attribute values.
pub fn terms_from_attr_values(
    svms: &[LinearModel],
    labels: &[usize],
    h_rows: &[Vec<f64>],
    p: usize,
) -> BasisUpdateTerms {
    let n = h_rows.len();
    let mut q = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let mut diff = 0.0;
        for (k, svm) in svms.iter().enumerate() {
            let y = label_sign(labels[i], k);
            let margin = y * svm.score(&h_rows[i]);
            let alpha = y * svm.w[p];
            let beta = margin - alpha * h_rows[i][p];
            diff += hinge(alpha + beta) - hinge(beta);
        }
        q.push(if diff < 0.0 { 1.0 } else { -1.0 });
        v.push(diff.abs());
    }
    BasisUpdateTerms { q, v }
}

/// Spec-level entry: recomputes attribute values from (bases, u) and derives
/// the terms for attribute `col` of region `j`.
pub fn basis_update_terms(
    svms: &[LinearModel],
    bases: &AttributeBases,
    u_rows: &[Vec<f64>],
    labels: &[usize],
    j: Region,
    col: usize,
) -> BasisUpdateTerms {
    let h_rows = attr_values_from_u(bases, u_rows);
    let p = j.index() * bases.attrs_per_region + col;
    terms_from_attr_values(svms, labels, &h_rows, p)
}

/// N×P real-valued attribute matrix from concatenated averaged features.
pub fn attr_values_from_u(bases: &AttributeBases, u_rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dl = bases.lifted_dim;
    u_rows
        .iter()
        .map(|u| {
            let mut h = Vec::with_capacity(bases.total_attrs());
            for j in Region::ALL {
                let block = &u[j.index() * dl..(j.index() + 1) * dl];
                h.extend(bases.mat(j).t_matvec(block));
            }
            h
        })
        .collect()
}

/// Weighted misclassification surrogate Ê(a) = Σ_i v_i ℓ(q_i aᵀx̂_i).
pub fn basis_surrogate(a: &[f64], terms: &BasisUpdateTerms, xhat_rows: &[&[f64]]) -> f64 {
    let mut total = 0.0;
    for ((x, &q), &v) in xhat_rows.iter().zip(&terms.q).zip(&terms.v) {
        if v == 0.0 {
            continue;
        }
        total += v * hinge(q * dot(a, x));
    }
    total
}

/// Replaces one basis column by the solution of the weighted hinge problem
/// (no bias), keeping the old column whenever the candidate does not improve
/// the surrogate. With all weights zero the column is returned unchanged.
pub fn update_basis_column(
    a_b: &[f64],
    terms: &BasisUpdateTerms,
    xhat_rows: &[&[f64]],
    lambda: f64,
    cfg: &SvmConfig,
) -> Vec<f64> {
    if terms.all_zero() {
        return a_b.to_vec();
    }
    let problem = SvmProblem::new(xhat_rows.to_vec(), terms.q.clone(), lambda)
        .with_weights(terms.v.clone())
        .without_bias();
    let candidate = crate::linsvm::svm_train_hinge_no_bias(&problem, cfg);
    let old_e = basis_surrogate(a_b, terms, xhat_rows);
    let new_e = basis_surrogate(&candidate.w, terms, xhat_rows);
    if new_e <= old_e {
        candidate.w
    } else {
        a_b.to_vec()
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

const TAG_INIT: u64 = 0x11;
const TAG_SVM: u64 = 0x22;
const TAG_BASIS: u64 = 0x33;
const TAG_FINAL: u64 = 0x44;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub attrs_per_region: usize,
    pub lambda: f64,
    pub outer_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub mode: AttrMode,
    pub lift: LiftConfig,
    pub svm_tol: f64,
    pub svm_max_iter: usize,
}

impl TrainConfig {
    pub fn new(attrs_per_region: usize, seed: u64) -> Self {
        TrainConfig {
            attrs_per_region,
            lambda: 100.0,
            outer_iters: 10,
            tol: 1e-4,
            seed,
            mode: AttrMode::RealValued,
            lift: LiftConfig::default(),
            svm_tol: 1e-6,
            svm_max_iter: 40_000,
        }
    }

    fn svm_cfg(&self, seed: u64) -> SvmConfig {
        SvmConfig { tol: self.svm_tol, max_iter: self.svm_max_iter, seed }
    }

    fn validate(&self, num_classes: usize) -> Result<(), AttrError> {
        if num_classes < 2 {
            return Err(AttrError::NotEnoughClasses(num_classes));
        }
        if self.attrs_per_region < 1 {
            return Err(AttrError::NoAttributes);
        }
        if !(self.lambda > 0.0) {
            return Err(AttrError::BadConfig(format!("lambda must be > 0, got {}", self.lambda)));
        }
        self.lift.validate().map_err(AttrError::BadConfig)?;
        Ok(())
    }
}

/// A trained attribute model: six basis matrices plus K specimen hyperplanes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttrModel {
    pub bases: AttributeBases,
    pub svms: Vec<LinearModel>,
    pub mode: AttrMode,
    pub scheme: Scheme,
    pub lift: LiftConfig,
    pub lambda: f64,
    pub seed: u64,
    pub num_classes: usize,
    pub d: usize,
}

impl AttrModel {
    pub fn code_length(&self) -> usize {
        self.bases.total_attrs()
    }
}

/// Objective values recorded along the alternation, for monotonicity checks:
/// each entry is (before SVM step, after SVM step, after basis pass).
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub rounds: Vec<(f64, f64, f64)>,
}

struct FoldFeatures {
    /// [i][region.index()] → mean lifted descriptor of that region.
    xhat: Vec<Vec<Vec<f64>>>,
    /// Per-cell lifted region descriptors, only materialized in binarized
    /// mode: [i][region.index()][cell].
    cells: Option<Vec<Vec<Vec<Vec<f64>>>>>,
}

fn fold_features(samples: &[&SpecimenSample], cfg: &TrainConfig) -> FoldFeatures {
    let lift = cfg.lift;
    let xhat: Vec<Vec<Vec<f64>>> = samples
        .par_iter()
        .map(|s| Region::ALL.iter().map(|&j| average_region_features(s, j, &lift)).collect())
        .collect();
    let cells = if cfg.mode == AttrMode::Binarized {
        Some(
            samples
                .par_iter()
                .map(|s| {
                    Region::ALL
                        .iter()
                        .map(|&j| {
                            s.cells_of_type(j.cell_type())
                                .map(|c| lift_slice(&c.regions[j.slot()].values, &lift))
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        )
    } else {
        None
    };
    FoldFeatures { xhat, cells }
}

/// SVM-step features: in real mode these are exactly the cached attribute
/// values; binarized mode re-thresholds per cell.
fn descriptor_rows(
    feats: &FoldFeatures,
    regions: &[Region],
    bases_cols: &[ColMat],
    h_rows: &[Vec<f64>],
    mode: AttrMode,
) -> Vec<Vec<f64>> {
    match mode {
        AttrMode::RealValued => h_rows.to_vec(),
        AttrMode::Binarized => {
            let cells = feats.cells.as_ref().expect("binarized mode caches cell lifts");
            let b = bases_cols[0].cols;
            (0..feats.xhat.len())
                .map(|i| {
                    let mut z = Vec::with_capacity(regions.len() * b);
                    for (r, &j) in regions.iter().enumerate() {
                        let cell_list = &cells[i][j.index()];
                        if cell_list.is_empty() {
                            z.extend(std::iter::repeat(0.0).take(b));
                            continue;
                        }
                        let mut counts = vec![0.0f64; b];
                        for x in cell_list {
                            for (c, col) in counts.iter_mut().zip(0..b) {
                                if dot(bases_cols[r].col(col), x) > 0.0 {
                                    *c += 1.0;
                                }
                            }
                        }
                        z.extend(counts.iter().map(|c| c / cell_list.len() as f64));
                    }
                    z
                })
                .collect()
        }
    }
}

struct AlternationResult {
    mats: Vec<ColMat>,
    svms: Vec<LinearModel>,
    trace: TrainTrace,
}

/// Shared block-coordinate-descent core over an arbitrary region subset.
fn alternate(
    feats: &FoldFeatures,
    labels: &[usize],
    num_classes: usize,
    regions: &[Region],
    cfg: &TrainConfig,
) -> Result<AlternationResult, AttrError> {
    let n = labels.len();
    let b = cfg.attrs_per_region;
    let lifted_dim = feats.xhat[0][0].len();
    let p_total = regions.len() * b;

    // Region-scoped seeding: a region's init stream is the same whether it is
    // trained jointly or on its own.
    let mut mats: Vec<ColMat> = regions
        .iter()
        .map(|j| {
            let mut rng =
                StdRng::seed_from_u64(derive_seed(cfg.seed, &[TAG_INIT, j.number() as u64]));
            let mut m = ColMat::zeros(lifted_dim, b);
            for c in 0..b {
                let col = m.col_mut(c);
                for v in col.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let norm = norm_sq(col).sqrt();
                if norm > 0.0 {
                    for v in col.iter_mut() {
                        *v /= norm;
                    }
                }
            }
            m
        })
        .collect();

    // Cached attribute values h[i][p] = a_pᵀ x̂_{i, region(p)}.
    let mut h_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut h = Vec::with_capacity(p_total);
            for (r, &j) in regions.iter().enumerate() {
                h.extend(mats[r].t_matvec(&feats.xhat[i][j.index()]));
            }
            h
        })
        .collect();

    let mut svms: Vec<LinearModel> = vec![LinearModel::zero(p_total); num_classes];
    let mut trace = TrainTrace::default();
    let mut prev_obj = f64::INFINITY;

    let objective = |svms: &[LinearModel], z: &[Vec<f64>]| -> f64 {
        ova_objective(svms, z, labels, num_classes, cfg.lambda)
    };

    for t in 0..cfg.outer_iters {
        let z = descriptor_rows(feats, regions, &mats, &h_rows, cfg.mode);
        let pre_svm = objective(&svms, &z);
        let seed = derive_seed(cfg.seed, &[TAG_SVM, t as u64]);
        let fresh = ova_train(&z, labels, num_classes, cfg.lambda, &cfg.svm_cfg(seed))?;
        keep_better_per_class(&mut svms, fresh, &z, labels, cfg.lambda);
        let post_svm = objective(&svms, &z);

        // One pass over every attribute column, fixed lexicographic order.
        for (r, &j) in regions.iter().enumerate() {
            for col in 0..b {
                let p = r * b + col;
                let terms = terms_from_attr_values(&svms, labels, &h_rows, p);
                if terms.all_zero() {
                    continue;
                }
                let xhat_rows: Vec<&[f64]> =
                    feats.xhat.iter().map(|per| per[j.index()].as_slice()).collect();
                let seed = derive_seed(cfg.seed, &[TAG_BASIS, t as u64, j.number() as u64, col as u64]);
                let new_col = update_basis_column(
                    mats[r].col(col),
                    &terms,
                    &xhat_rows,
                    cfg.lambda,
                    &cfg.svm_cfg(seed),
                );
                if new_col != mats[r].col(col) {
                    mats[r].set_col(col, &new_col);
                    for (i, h) in h_rows.iter_mut().enumerate() {
                        h[p] = dot(&new_col, &feats.xhat[i][j.index()]);
                    }
                }
            }
        }

        let z = descriptor_rows(feats, regions, &mats, &h_rows, cfg.mode);
        let post_basis = objective(&svms, &z);
        trace.rounds.push((pre_svm, post_svm, post_basis));
        let settled = (prev_obj - post_basis).abs() <= cfg.tol * (1.0 + post_basis.abs());
        prev_obj = post_basis;
        if settled {
            break;
        }
    }

    // Final SVM refit so the returned hyperplanes match the final bases.
    let z = descriptor_rows(feats, regions, &mats, &h_rows, cfg.mode);
    let seed = derive_seed(cfg.seed, &[TAG_FINAL]);
    let fresh = ova_train(&z, labels, num_classes, cfg.lambda, &cfg.svm_cfg(seed))?;
    keep_better_per_class(&mut svms, fresh, &z, labels, cfg.lambda);
    Ok(AlternationResult { mats, svms, trace })
}

fn ova_objective(
    svms: &[LinearModel],
    z: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    lambda: f64,
) -> f64 {
    let n = z.len() as f64;
    (0..num_classes)
        .map(|k| {
            let mut loss = 0.0;
            for (zi, &l) in z.iter().zip(labels) {
                loss += hinge(label_sign(l, k) * svms[k].score(zi));
            }
            0.5 * norm_sq(&svms[k].w) + lambda / n * loss
        })
        .sum()
}

/// Per-class accept step: class objectives are independent, so replacing a
/// class model only when it improves keeps the total non-increasing exactly.
fn keep_better_per_class(
    current: &mut [LinearModel],
    fresh: Vec<LinearModel>,
    z: &[Vec<f64>],
    labels: &[usize],
    lambda: f64,
) {
    let n = z.len() as f64;
    for (k, cand) in fresh.into_iter().enumerate() {
        let obj = |m: &LinearModel| -> f64 {
            let mut loss = 0.0;
            for (zi, &l) in z.iter().zip(labels) {
                loss += hinge(label_sign(l, k) * m.score(zi));
            }
            0.5 * norm_sq(&m.w) + lambda / n * loss
        };
        if obj(&cand) <= obj(&current[k]) {
            current[k] = cand;
        }
    }
}

fn resolve_subset<'d>(
    dataset: &'d Dataset,
    ids: Option<&[String]>,
) -> Result<(Vec<&'d SpecimenSample>, Vec<usize>), AttrError> {
    let samples: Vec<&SpecimenSample> = match ids {
        Some(ids) => ids
            .iter()
            .map(|id| dataset.sample_by_id(id).ok_or_else(|| AttrError::UnknownId(id.clone())))
            .collect::<Result<_, _>>()?,
        None => dataset.samples.iter().collect(),
    };
    if samples.is_empty() {
        return Err(AttrError::BadConfig("empty training subset".into()));
    }
    let labels = samples.iter().map(|s| s.label).collect();
    Ok((samples, labels))
}

pub fn train_arcad(
    dataset: &Dataset,
    train_ids: Option<&[String]>,
    cfg: &TrainConfig,
) -> Result<AttrModel, AttrError> {
    Ok(train_arcad_traced(dataset, train_ids, cfg)?.0)
}

/// ARCAD: all six regions alternate against the single global objective.
pub fn train_arcad_traced(
    dataset: &Dataset,
    train_ids: Option<&[String]>,
    cfg: &TrainConfig,
) -> Result<(AttrModel, TrainTrace), AttrError> {
    let num_classes = dataset.num_classes();
    cfg.validate(num_classes)?;
    let (samples, labels) = resolve_subset(dataset, train_ids)?;
    let feats = fold_features(&samples, cfg);
    let result = alternate(&feats, &labels, num_classes, &Region::ALL, cfg)?;
    let bases = AttributeBases {
        lifted_dim: cfg.lift.lifted_dim(dataset.d),
        attrs_per_region: cfg.attrs_per_region,
        seed: cfg.seed,
        mats: result.mats,
    };
    let model = AttrModel {
        bases,
        svms: result.svms,
        mode: cfg.mode,
        scheme: Scheme::Arcad,
        lift: cfg.lift,
        lambda: cfg.lambda,
        seed: cfg.seed,
        num_classes,
        d: dataset.d,
    };
    Ok((model, result.trace))
}

pub fn train_crad(
    dataset: &Dataset,
    train_ids: Option<&[String]>,
    cfg: &TrainConfig,
) -> Result<AttrModel, AttrError> {
    Ok(train_crad_traced(dataset, train_ids, cfg)?.0)
}

/// CRAD: each region alternates against its own region-restricted objective,
/// the per-region hyperplanes are discarded, then the final one-vs-all SVMs
/// are trained on the concatenated descriptor with every basis frozen.
pub fn train_crad_traced(
    dataset: &Dataset,
    train_ids: Option<&[String]>,
    cfg: &TrainConfig,
) -> Result<(AttrModel, Vec<TrainTrace>), AttrError> {
    let num_classes = dataset.num_classes();
    cfg.validate(num_classes)?;
    let (samples, labels) = resolve_subset(dataset, train_ids)?;
    let feats = fold_features(&samples, cfg);

    let mut mats = Vec::with_capacity(Region::COUNT);
    let mut traces = Vec::with_capacity(Region::COUNT);
    for j in Region::ALL {
        let result = alternate(&feats, &labels, num_classes, &[j], cfg)?;
        mats.extend(result.mats);
        traces.push(result.trace);
    }
    let bases = AttributeBases {
        lifted_dim: cfg.lift.lifted_dim(dataset.d),
        attrs_per_region: cfg.attrs_per_region,
        seed: cfg.seed,
        mats,
    };

    // Final stage: specimen SVMs over the full concatenated descriptor.
    let z: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| specimen_descriptor(s, &bases, cfg.mode, &cfg.lift).z)
        .collect();
    let seed = derive_seed(cfg.seed, &[TAG_FINAL]);
    let svms = ova_train(&z, &labels, num_classes, cfg.lambda, &cfg.svm_cfg(seed))?;
    let model = AttrModel {
        bases,
        svms,
        mode: cfg.mode,
        scheme: Scheme::Crad,
        lift: cfg.lift,
        lambda: cfg.lambda,
        seed: cfg.seed,
        num_classes,
        d: dataset.d,
    };
    Ok((model, traces))
}

/// One-vs-all prediction: scores s_k = w_k·z + b_k, argmax with ties to the
/// lowest class index.
pub fn predict(model: &AttrModel, sample: &SpecimenSample) -> Result<(usize, Vec<f64>), AttrError> {
    if sample.cells[0].dim() != model.d {
        return Err(AttrError::Dimension(format!(
            "sample dimension {} != model dimension {}",
            sample.cells[0].dim(),
            model.d
        )));
    }
    let desc = specimen_descriptor(sample, &model.bases, model.mode, &model.lift);
    let scores: Vec<f64> = model.svms.iter().map(|m| m.score(&desc.z)).collect();
    Ok((argmax_class(&scores), scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Cell, CellType, Intensity, RegionalHistogram};

    fn hist(values: Vec<f64>) -> RegionalHistogram {
        RegionalHistogram { values }
    }

    fn normalized(mut v: Vec<f64>) -> Vec<f64> {
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            for x in v.iter_mut() {
                *x /= s;
            }
        }
        v
    }

    fn random_cell(rng: &mut StdRng, ty: CellType, d: usize) -> Cell {
        let mk = |rng: &mut StdRng| {
            hist(normalized((0..d).map(|_| rng.gen::<f64>()).collect()))
        };
        Cell { cell_type: ty, regions: [mk(rng), mk(rng), mk(rng)] }
    }

    fn random_specimen(rng: &mut StdRng, d: usize, label: usize) -> SpecimenSample {
        let n_i = rng.gen_range(1..5);
        let n_m = rng.gen_range(0..3);
        let mut cells = Vec::new();
        for _ in 0..n_i {
            cells.push(random_cell(rng, CellType::Interphase, d));
        }
        for _ in 0..n_m {
            cells.push(random_cell(rng, CellType::Mitotic, d));
        }
        SpecimenSample { id: format!("s{label}"), label, intensity: Intensity::Weak, cells }
    }

    #[test]
    fn identity_basis_reproduces_input() {
        let m = ColMat::identity(4);
        let x = vec![0.5, -1.0, 2.0, 0.0];
        assert_eq!(cell_attribute_values(&m, &x, AttrMode::RealValued), x);
        assert_eq!(
            cell_attribute_values(&m, &x, AttrMode::Binarized),
            vec![1.0, 0.0, 1.0, 0.0]
        );
        let z = ColMat::zeros(4, 3);
        assert_eq!(cell_attribute_values(&z, &x, AttrMode::RealValued), vec![0.0; 3]);
    }

    #[test]
    fn attribute_values_match_naive_double_loop() {
        let mut rng = StdRng::seed_from_u64(1);
        let (rows, cols) = (7, 4);
        let mut m = ColMat::zeros(rows, cols);
        for c in 0..cols {
            for v in m.col_mut(c).iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let x: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = cell_attribute_values(&m, &x, AttrMode::RealValued);
        for c in 0..cols {
            let mut acc = 0.0;
            for r in 0..rows {
                acc += m.col(c)[r] * x[r];
            }
            assert!((fast[c] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn descriptor_blocks_follow_linearity() {
        let mut rng = StdRng::seed_from_u64(2);
        let d = 6;
        let lift = LiftConfig::default();
        let bases = AttributeBases::random(lift.lifted_dim(d), 3, 7);
        let sample = random_specimen(&mut rng, d, 0);
        let desc = specimen_descriptor(&sample, &bases, AttrMode::RealValued, &lift);
        // compare against the mean-of-per-cell-values order of computation
        for j in Region::ALL {
            let slot = j.slot();
            let cells: Vec<Vec<f64>> = sample
                .cells_of_type(j.cell_type())
                .map(|c| {
                    cell_attribute_values(
                        bases.mat(j),
                        &lift_slice(&c.regions[slot].values, &lift),
                        AttrMode::RealValued,
                    )
                })
                .collect();
            let block = desc.block(j);
            if cells.is_empty() {
                assert!(block.iter().all(|&v| v == 0.0));
                continue;
            }
            for (c, &got) in block.iter().enumerate() {
                let mean: f64 =
                    cells.iter().map(|h| h[c]).sum::<f64>() / cells.len() as f64;
                assert!(
                    (got - mean).abs() <= 1e-12 * (1.0 + mean.abs()),
                    "region {j} col {c}: {got} vs {mean}"
                );
            }
        }
    }

    #[test]
    fn descriptor_invariant_under_shuffle() {
        let mut rng = StdRng::seed_from_u64(3);
        let d = 5;
        let lift = LiftConfig::default();
        let bases = AttributeBases::random(lift.lifted_dim(d), 4, 1);
        for mode in [AttrMode::RealValued, AttrMode::Binarized] {
            let sample = random_specimen(&mut rng, d, 0);
            let a = specimen_descriptor(&sample, &bases, mode, &lift);
            let mut shuffled = sample.clone();
            shuffled.cells.shuffle(&mut rng);
            let b = specimen_descriptor(&shuffled, &bases, mode, &lift);
            assert_eq!(a.z, b.z);
            let mut doubled = sample.clone();
            doubled.cells = sample
                .cells
                .iter()
                .flat_map(|c| [c.clone(), c.clone()])
                .collect();
            let c = specimen_descriptor(&doubled, &bases, mode, &lift);
            assert_eq!(a.z, c.z);
        }
    }

    #[test]
    fn binarized_entries_are_count_fractions() {
        let mut rng = StdRng::seed_from_u64(4);
        let d = 5;
        let lift = LiftConfig::default();
        let bases = AttributeBases::random(lift.lifted_dim(d), 4, 1);
        let sample = random_specimen(&mut rng, d, 0);
        let desc = specimen_descriptor(&sample, &bases, AttrMode::Binarized, &lift);
        for j in Region::ALL {
            let n = sample.cells_of_type(j.cell_type()).count();
            for &v in desc.block(j) {
                assert!((0.0..=1.0).contains(&v));
                if n > 0 {
                    let scaled = v * n as f64;
                    assert!((scaled - scaled.round()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_parameter_objectives_equal_k_lambda() {
        let mut rng = StdRng::seed_from_u64(5);
        let d = 4;
        let lift = LiftConfig::default();
        let k = 3;
        let bases = AttributeBases::random(lift.lifted_dim(d), 2, 0);
        let samples: Vec<SpecimenSample> =
            (0..6).map(|i| random_specimen(&mut rng, d, i % k)).collect();
        let refs: Vec<&SpecimenSample> = samples.iter().collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let svms = vec![LinearModel::zero(bases.total_attrs()); k];
        let lambda = 13.0;
        let arcad = eval_arcad_objective(&svms, &bases, &refs, &labels, lambda, &lift);
        assert!((arcad - k as f64 * lambda).abs() < 1e-9);
        let u_rows: Vec<Vec<f64>> =
            refs.iter().map(|s| crate::featmap::build_u(s, &lift)).collect();
        let picodes = eval_picodes_objective(&svms, &bases, &u_rows, &labels, lambda);
        assert!((picodes - k as f64 * lambda).abs() < 1e-9);
    }

    #[test]
    fn hand_expanded_single_cell_objective() {
        // one specimen, one interphase cell, b = 1, K = 1-vs-rest over 2 classes
        let lift = LiftConfig { n: 0, sample_period: 0.7 };
        let d = 2;
        let cell = Cell {
            cell_type: CellType::Interphase,
            regions: [hist(vec![0.5, 0.5]), hist(vec![1.0, 0.0]), hist(vec![0.0, 1.0])],
        };
        let sample = SpecimenSample {
            id: "x".into(),
            label: 0,
            intensity: Intensity::Weak,
            cells: vec![cell.clone()],
        };
        let mut bases = AttributeBases::random(lift.lifted_dim(d), 1, 0);
        for j in Region::ALL {
            bases.mat_mut(j).set_col(0, &[0.3, -0.2]);
        }
        let w = vec![1.0, 0.5, -0.5, 0.0, 0.0, 0.0];
        let svms = vec![
            LinearModel { w: w.clone(), b: 0.25 },
            LinearModel { w: vec![0.0; 6], b: 0.0 },
        ];
        let lambda = 2.0;
        let got = eval_arcad_objective(&svms, &bases, &[&sample], &[0], lambda, &lift);
        // by hand: lifted (n=0) value is sqrt(L*kappa0*x); region values:
        let amp = (0.7 * (2.0 / std::f64::consts::PI)).sqrt();
        let lift1 = [amp * 0.5f64.sqrt(), amp * 0.5f64.sqrt()];
        let lift2 = [amp, 0.0];
        let lift3 = [0.0, amp];
        let a = [0.3, -0.2];
        let h1 = a[0] * lift1[0] + a[1] * lift1[1];
        let h2 = a[0] * lift2[0] + a[1] * lift2[1];
        let h3 = a[0] * lift3[0] + a[1] * lift3[1];
        // N=1 cell, mitotic regions empty
        let score0 = 0.25 + 1.0 * h1 + 0.5 * h2 - 0.5 * h3;
        let margin0 = score0; // y = +1
        let score1 = 0.0;
        let margin1 = -score1; // y = -1 for class 1
        let expect = 0.5 * crate::numeric::norm_sq(&w)
            + lambda * (1.0f64 - margin0).max(0.0)
            + 0.0
            + lambda * (1.0f64 - margin1).max(0.0);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn objective_equivalence_random_instances() {
        let mut rng = StdRng::seed_from_u64(6);
        for trial in 0..20 {
            let d = rng.gen_range(2..6);
            let b = rng.gen_range(1..4);
            let k = rng.gen_range(2..4);
            let n = rng.gen_range(2..8);
            let lift = LiftConfig::default();
            let mut bases = AttributeBases::random(lift.lifted_dim(d), b, trial);
            for j in Region::ALL {
                for c in 0..b {
                    for v in bases.mat_mut(j).col_mut(c).iter_mut() {
                        *v = rng.gen_range(-1.0..1.0);
                    }
                }
            }
            let svms: Vec<LinearModel> = (0..k)
                .map(|_| LinearModel {
                    w: (0..6 * b).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    b: rng.gen_range(-1.0..1.0),
                })
                .collect();
            let samples: Vec<SpecimenSample> =
                (0..n).map(|i| random_specimen(&mut rng, d, i % k)).collect();
            let refs: Vec<&SpecimenSample> = samples.iter().collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            let lambda = rng.gen_range(0.5..20.0);
            let arcad = eval_arcad_objective(&svms, &bases, &refs, &labels, lambda, &lift);
            let u_rows: Vec<Vec<f64>> =
                refs.iter().map(|s| crate::featmap::build_u(s, &lift)).collect();
            let picodes = eval_picodes_objective(&svms, &bases, &u_rows, &labels, lambda);
            assert!(
                (arcad - picodes).abs() <= 1e-9 * (1.0 + arcad.abs()),
                "trial {trial}: {arcad} vs {picodes}"
            );
        }
    }

    #[test]
    fn unused_attribute_yields_zero_terms() {
        let mut rng = StdRng::seed_from_u64(7);
        let b = 2;
        let p_total = 6 * b;
        let n = 5;
        let k = 3;
        let h_rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p_total).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let p = 3;
        // w_{k,p} = 0 for every class => alpha = 0 => v = 0
        let svms: Vec<LinearModel> = (0..k)
            .map(|_| {
                let mut w: Vec<f64> = (0..p_total).map(|_| rng.gen_range(-1.0..1.0)).collect();
                w[p] = 0.0;
                LinearModel { w, b: rng.gen_range(-0.5..0.5) }
            })
            .collect();
        let terms = terms_from_attr_values(&svms, &labels, &h_rows, p);
        assert!(terms.all_zero());
        for (&q, &v) in terms.q.iter().zip(&terms.v) {
            assert!(q == 1.0 || q == -1.0);
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn hand_computed_terms_two_attributes() {
        // K = 1 effective class (one svm), two attributes, one specimen.
        // svm: w = [2, -1], b = 0.5; h = [0.3, 0.8]; label 0 (y = +1), p = 0.
        let svms = vec![LinearModel { w: vec![2.0, -1.0], b: 0.5 }];
        let h_rows = vec![vec![0.3, 0.8]];
        let terms = terms_from_attr_values(&svms, &[0], &h_rows, 0);
        // margin = 0.5 + 0.6 - 0.8 = 0.3; alpha = 2; beta = 0.3 - 2*0.3 = -0.3
        // l(alpha+beta) = l(1.7) = 0, l(beta) = l(-0.3) = 1.3, diff = -1.3
        assert_eq!(terms.q[0], 1.0);
        assert!((terms.v[0] - 1.3).abs() < 1e-12);
        // and for p = 1: alpha = -1, beta = 0.3 + 0.8 = 1.1
        // l(alpha+beta) = l(0.1) = 0.9, l(beta) = 0, diff = +0.9 -> q = -1
        let terms = terms_from_attr_values(&svms, &[0], &h_rows, 1);
        assert_eq!(terms.q[0], -1.0);
        assert!((terms.v[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn column_update_never_increases_surrogate() {
        let mut rng = StdRng::seed_from_u64(8);
        let cfg = SvmConfig { tol: 1e-8, max_iter: 60_000, seed: 5 };
        for trial in 0..100 {
            let n = rng.gen_range(2..12);
            let dim = rng.gen_range(2..6);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let terms = BasisUpdateTerms {
                q: (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect(),
                v: (0..n).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..2.0) }).collect(),
            };
            let old: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let new = update_basis_column(&old, &terms, &row_refs, 50.0, &cfg);
            let e_old = basis_surrogate(&old, &terms, &row_refs);
            let e_new = basis_surrogate(&new, &terms, &row_refs);
            assert!(e_new <= e_old + 1e-8, "trial {trial}: {e_new} > {e_old}");
        }
    }

    #[test]
    fn column_update_reaches_zero_on_separable() {
        let mut rng = StdRng::seed_from_u64(9);
        let cfg = SvmConfig { tol: 1e-9, max_iter: 100_000, seed: 5 };
        // points on either side of a known hyperplane, labels consistent
        let dir = [0.6, -0.8];
        let mut rows = Vec::new();
        let mut q = Vec::new();
        for _ in 0..10 {
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let t = rng.gen_range(0.5..1.5);
            let orth = rng.gen_range(-1.0..1.0);
            rows.push(vec![
                side * t * dir[0] + orth * dir[1],
                side * t * dir[1] - orth * dir[0],
            ]);
            q.push(side);
        }
        let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let terms = BasisUpdateTerms { q, v: vec![1.0; 10] };
        let new = update_basis_column(&[0.0, 0.0], &terms, &row_refs, 10_000.0, &cfg);
        let e = basis_surrogate(&new, &terms, &row_refs);
        assert!(e < 1e-6, "surrogate {e}");
    }

    #[test]
    fn all_zero_terms_leave_column_unchanged() {
        let cfg = SvmConfig::default();
        let rows = [vec![1.0, 2.0]];
        let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let terms = BasisUpdateTerms { q: vec![1.0], v: vec![0.0] };
        let old = vec![0.25, -0.5];
        assert_eq!(update_basis_column(&old, &terms, &row_refs, 10.0, &cfg), old);
    }
}
