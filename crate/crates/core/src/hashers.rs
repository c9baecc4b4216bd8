//! Baseline binary code generators over the specimen-level averaged feature:
//! random-projection LSH, kernelized LSH, spectral hashing, and iterative
//! quantization, plus the shared one-vs-all classifier over codes.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linsvm::{argmax_class, ova_train, LinearModel, SvmConfig, SvmError};
use crate::numeric::dot;

#[derive(Debug, Error)]
pub enum HashError {
    #[error("need at least 1 bit")]
    NoBits,
    #[error("training set too small: {0}")]
    TooFewSamples(String),
    #[error("code_length {code} exceeds feature rank {rank}")]
    RankTooLow { code: usize, rank: usize },
    #[error(transparent)]
    Svm(#[from] SvmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HashMethod {
    Lsh,
    Klsh,
    Sph,
    Itq,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitCode {
    pub bits: Vec<bool>,
}

impl BitCode {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// ±1 representation used by the downstream linear classifier.
    pub fn to_pm1(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()
    }

    pub fn hamming(&self, other: &BitCode) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }
}

#[derive(Debug, Clone)]
pub enum HashModel {
    Lsh(LshModel),
    Klsh(KlshModel),
    Sph(SphModel),
    Itq(ItqModel),
}

impl HashModel {
    pub fn method(&self) -> HashMethod {
        match self {
            HashModel::Lsh(_) => HashMethod::Lsh,
            HashModel::Klsh(_) => HashMethod::Klsh,
            HashModel::Sph(_) => HashMethod::Sph,
            HashModel::Itq(_) => HashMethod::Itq,
        }
    }

    pub fn code_length(&self) -> usize {
        match self {
            HashModel::Lsh(m) => m.code_length(),
            HashModel::Klsh(m) => m.code_length(),
            HashModel::Sph(m) => m.code_length(),
            HashModel::Itq(m) => m.code_length(),
        }
    }

    pub fn encode(&self, u: &[f64]) -> BitCode {
        match self {
            HashModel::Lsh(m) => m.encode(u),
            HashModel::Klsh(m) => m.encode(u),
            HashModel::Sph(m) => m.encode(u),
            HashModel::Itq(m) => m.encode(u),
        }
    }
}

// ---------------------------------------------------------------------------
// LSH
// ---------------------------------------------------------------------------

/// Sign-of-random-projection codes; bit t is [r_t·u ≥ 0] with seeded
/// standard-normal r_t.
#[derive(Debug, Clone)]
pub struct LshModel {
    pub dim: usize,
    projections: Vec<Vec<f64>>,
}

pub fn lsh_train(dim: usize, code_length: usize, seed: u64) -> Result<LshModel, HashError> {
    if code_length == 0 {
        return Err(HashError::NoBits);
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let projections = (0..code_length)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    Ok(LshModel { dim, projections })
}

impl LshModel {
    pub fn code_length(&self) -> usize {
        self.projections.len()
    }

    pub fn encode(&self, u: &[f64]) -> BitCode {
        BitCode { bits: self.projections.iter().map(|r| dot(r, u) >= 0.0).collect() }
    }
}

// ---------------------------------------------------------------------------
// KLSH
// ---------------------------------------------------------------------------

/// Kernelized LSH: each bit is the sign of a weighted sum of kernel
/// evaluations against a fixed anchor set, with weights K_c^{-1/2}·e_S from
/// the centered anchor Gram matrix (ridged when near-singular).
#[derive(Debug, Clone)]
pub struct KlshModel {
    anchors: Vec<Vec<f64>>,
    /// code_length rows of anchor weights.
    weights: Vec<Vec<f64>>,
    kernel: KernelKind,
}

/// Kernels the coded baselines use; kept closed so models stay serializable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Intersection,
    Linear,
}

impl KernelKind {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelKind::Intersection => crate::featmap::intersection_kernel(a, b),
            KernelKind::Linear => dot(a, b),
        }
    }
}

pub fn klsh_train(
    train_rows: &[Vec<f64>],
    kernel: KernelKind,
    anchors: usize,
    code_length: usize,
    seed: u64,
) -> Result<KlshModel, HashError> {
    if code_length == 0 {
        return Err(HashError::NoBits);
    }
    let n = train_rows.len();
    if anchors == 0 || anchors > n {
        return Err(HashError::TooFewSamples(format!(
            "{anchors} anchors requested from {n} training rows"
        )));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n, anchors);
    let anchor_rows: Vec<Vec<f64>> = picks.iter().map(|i| train_rows[i].clone()).collect();
    let m = anchors;

    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = kernel.eval(&anchor_rows[i], &anchor_rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    // center: K_c = H K H
    let row_mean: Vec<f64> = (0..m).map(|i| k.row(i).sum() / m as f64).collect();
    let total_mean: f64 = row_mean.iter().sum::<f64>() / m as f64;
    let mut kc = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            kc[(i, j)] = k[(i, j)] - row_mean[i] - row_mean[j] + total_mean;
        }
    }
    let eig = kc.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    // centered Gram is always rank-deficient; ridge shifts eigenvalues only
    let ridge = if eig.eigenvalues.iter().any(|&l| l < 1e-8 * max_eig.max(1.0)) {
        1e-8
    } else {
        0.0
    };
    let inv_sqrt: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            let shifted = l + ridge;
            if shifted > 1e-12 {
                1.0 / shifted.sqrt()
            } else {
                0.0
            }
        })
        .collect();

    let subset = m.div_ceil(10).clamp(1, 30);
    let mut weights = Vec::with_capacity(code_length);
    for _ in 0..code_length {
        let chosen = rand::seq::index::sample(&mut rng, m, subset);
        let mut e_s = DVector::zeros(m);
        for i in chosen.iter() {
            e_s[i] = 1.0;
        }
        // w = V diag(1/sqrt(l)) Vᵀ e_s
        let projected = eig.eigenvectors.transpose() * &e_s;
        let scaled = DVector::from_iterator(m, projected.iter().zip(&inv_sqrt).map(|(p, s)| p * s));
        let w = &eig.eigenvectors * scaled;
        weights.push(w.iter().cloned().collect());
    }
    Ok(KlshModel { anchors: anchor_rows, weights, kernel })
}

impl KlshModel {
    pub fn code_length(&self) -> usize {
        self.weights.len()
    }

    pub fn encode(&self, u: &[f64]) -> BitCode {
        let kvec: Vec<f64> = self.anchors.iter().map(|a| self.kernel.eval(u, a)).collect();
        BitCode { bits: self.weights.iter().map(|w| dot(w, &kvec) >= 0.0).collect() }
    }
}

// ---------------------------------------------------------------------------
// PCA (shared by SPH and ITQ)
// ---------------------------------------------------------------------------

pub struct Pca {
    pub mean: Vec<f64>,
    /// dim × components, column-major columns of unit length.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        self.components.iter().map(|c| dot(c, &centered)).collect()
    }
}

/// Principal directions of the rows, at most `max_components`, dropping
/// directions with (numerically) zero variance. Goes through the N×N Gram
/// matrix when there are fewer rows than columns.
pub fn pca(rows: &[Vec<f64>], max_components: usize) -> Pca {
    let n = rows.len();
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let mut pairs: Vec<(f64, Vec<f64>)> = if n <= dim {
        // Gram trick: eigenvectors of X Xᵀ map to directions Xᵀ v.
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = dot(&centered[i], &centered[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let eig = gram.symmetric_eigen();
        (0..n)
            .map(|c| {
                let l: f64 = eig.eigenvalues[c].max(0.0);
                let mut dir = vec![0.0; dim];
                for i in 0..n {
                    let coef = eig.eigenvectors[(i, c)];
                    for (d, v) in dir.iter_mut().zip(&centered[i]) {
                        *d += coef * v;
                    }
                }
                let norm = crate::numeric::norm_sq(&dir).sqrt();
                if norm > 0.0 {
                    for d in dir.iter_mut() {
                        *d /= norm;
                    }
                }
                (l / (n as f64 - 1.0).max(1.0), dir)
            })
            .collect()
    } else {
        let mut cov = DMatrix::zeros(dim, dim);
        for r in &centered {
            for i in 0..dim {
                for j in i..dim {
                    cov[(i, j)] += r[i] * r[j];
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        cov /= (n as f64 - 1.0).max(1.0);
        let eig = cov.symmetric_eigen();
        (0..dim)
            .map(|c| {
                let dir: Vec<f64> = (0..dim).map(|i| eig.eigenvectors[(i, c)]).collect();
                (eig.eigenvalues[c].max(0.0), dir)
            })
            .collect()
    };

    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let scale = pairs.first().map_or(0.0, |p| p.0);
    let mut components = Vec::new();
    let mut eigenvalues = Vec::new();
    for (l, mut dir) in pairs.into_iter().take(max_components) {
        if l <= 1e-12 * scale.max(1e-300) {
            break; // numerically zero variance: rank exhausted
        }
        // deterministic sign: largest-magnitude entry is positive
        let pivot = dir
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if dir[pivot] < 0.0 {
            for v in dir.iter_mut() {
                *v = -*v;
            }
        }
        components.push(dir);
        eigenvalues.push(l);
    }
    Pca { mean, components, eigenvalues }
}

// ---------------------------------------------------------------------------
// Spectral hashing
// ---------------------------------------------------------------------------

/// PCA plus analytic one-dimensional eigenfunctions of the uniform
/// distribution on each principal direction: bit i thresholds
/// sin(π/2 + ω_i·(x_t − min_t)) at zero, with the code_length smallest-ω²
/// single-direction modes.
#[derive(Debug, Clone)]
pub struct SphModel {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    mins: Vec<f64>,
    /// per bit: (component index, angular frequency)
    modes: Vec<(usize, f64)>,
    pub warning: Option<String>,
}

pub fn sph_train(train_rows: &[Vec<f64>], code_length: usize) -> Result<SphModel, HashError> {
    if code_length == 0 {
        return Err(HashError::NoBits);
    }
    if train_rows.len() <= code_length {
        return Err(HashError::TooFewSamples(format!(
            "need more than {code_length} training rows, got {}",
            train_rows.len()
        )));
    }
    let p = pca(train_rows, code_length);
    let c = p.components.len();
    let warning = if c < code_length {
        Some(format!("rank-deficient data: using {c} of {code_length} principal directions"))
    } else {
        None
    };
    let projected: Vec<Vec<f64>> = train_rows.iter().map(|r| p.project(r)).collect();
    let mut mins = vec![f64::INFINITY; c];
    let mut maxs = vec![f64::NEG_INFINITY; c];
    for row in &projected {
        for t in 0..c {
            mins[t] = mins[t].min(row[t]);
            maxs[t] = maxs[t].max(row[t]);
        }
    }
    let ranges: Vec<f64> = mins.iter().zip(&maxs).map(|(a, b)| (b - a).max(1e-12)).collect();
    let max_range = ranges.iter().cloned().fold(0.0f64, f64::max);

    // candidate single-direction modes, smallest frequency first
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new(); // (omega^2, t, k)
    for t in 0..c {
        let max_mode = ((code_length as f64 + 1.0) * ranges[t] / max_range).ceil() as usize;
        for k in 1..max_mode.max(2) {
            let omega = k as f64 * std::f64::consts::PI / ranges[t];
            candidates.push((omega * omega, t, k));
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let modes: Vec<(usize, f64)> = candidates
        .into_iter()
        .take(code_length)
        .map(|(_, t, k)| (t, k as f64 * std::f64::consts::PI / ranges[t]))
        .collect();
    Ok(SphModel { mean: p.mean, components: p.components, mins, modes, warning })
}

impl SphModel {
    pub fn code_length(&self) -> usize {
        self.modes.len()
    }

    pub fn encode(&self, u: &[f64]) -> BitCode {
        let centered: Vec<f64> = u.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        let projected: Vec<f64> =
            self.components.iter().map(|c| dot(c, &centered)).collect();
        let bits = self
            .modes
            .iter()
            .map(|&(t, omega)| {
                let x = projected[t] - self.mins[t];
                (std::f64::consts::FRAC_PI_2 + omega * x).sin() > 0.0
            })
            .collect();
        BitCode { bits }
    }
}

// ---------------------------------------------------------------------------
// ITQ
// ---------------------------------------------------------------------------

/// PCA projection followed by an orthogonal rotation alternately fit to the
/// binary quantization of the training data (sign step, then an orthogonal
/// Procrustes step).
#[derive(Debug, Clone)]
pub struct ItqModel {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    /// c × c orthogonal rotation, row-major rows.
    rotation: Vec<Vec<f64>>,
    /// ‖B − V·R‖²_F after every iteration, for the monotonicity invariant.
    pub loss_trace: Vec<f64>,
}

pub fn itq_train(
    train_rows: &[Vec<f64>],
    code_length: usize,
    iters: usize,
    seed: u64,
) -> Result<ItqModel, HashError> {
    if code_length == 0 {
        return Err(HashError::NoBits);
    }
    let p = pca(train_rows, code_length);
    if p.components.len() < code_length {
        return Err(HashError::RankTooLow { code: code_length, rank: p.components.len() });
    }
    let c = code_length;
    let n = train_rows.len();
    let v = DMatrix::from_fn(n, c, |i, j| {
        let centered: Vec<f64> =
            train_rows[i].iter().zip(&p.mean).map(|(x, m)| x - m).collect();
        dot(&p.components[j], &centered)
    });

    // seeded random orthogonal init via QR with a fixed sign convention
    let mut rng = StdRng::seed_from_u64(seed);
    let g = DMatrix::from_fn(c, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut r_mat = qr.q();
    let rr = qr.r();
    for j in 0..c {
        if rr[(j, j)] < 0.0 {
            for i in 0..c {
                r_mat[(i, j)] = -r_mat[(i, j)];
            }
        }
    }

    let mut loss_trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let vr = &v * &r_mat;
        let b = vr.map(|x| if x >= 0.0 { 1.0 } else { -1.0 });
        // Procrustes: R = U·Wᵀ for SVD(VᵀB) = U Σ Wᵀ maximizes tr(RᵀVᵀB)
        let vtb = v.transpose() * &b;
        let svd = vtb.svd(true, true);
        let u_m = svd.u.as_ref().expect("svd requested u");
        let vt_m = svd.v_t.as_ref().expect("svd requested v_t");
        r_mat = u_m * vt_m;
        let vr = &v * &r_mat;
        let loss = vr
            .iter()
            .zip(b.iter())
            .map(|(x, bb)| {
                let d = bb - x;
                d * d
            })
            .sum::<f64>();
        loss_trace.push(loss);
    }

    let rotation: Vec<Vec<f64>> =
        (0..c).map(|i| (0..c).map(|j| r_mat[(i, j)]).collect()).collect();
    Ok(ItqModel { mean: p.mean, components: p.components, rotation, loss_trace })
}

impl ItqModel {
    pub fn code_length(&self) -> usize {
        self.rotation.len()
    }

    pub fn encode(&self, u: &[f64]) -> BitCode {
        let centered: Vec<f64> = u.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        let projected: Vec<f64> =
            self.components.iter().map(|c| dot(c, &centered)).collect();
        let c = self.rotation.len();
        let bits = (0..c)
            .map(|j| {
                let mut s = 0.0;
                for i in 0..c {
                    s += projected[i] * self.rotation[i][j];
                }
                s >= 0.0
            })
            .collect();
        BitCode { bits }
    }

    /// Max-norm deviation of RᵀR from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        let c = self.rotation.len();
        let mut worst = 0.0f64;
        for i in 0..c {
            for j in 0..c {
                let mut s = 0.0;
                for k in 0..c {
                    s += self.rotation[k][i] * self.rotation[k][j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// Classification over codes
// ---------------------------------------------------------------------------

/// One-vs-all linear SVM over ±1 code vectors, mirroring how the learned
/// descriptors are consumed so method curves differ only by code
/// construction.
pub struct HashClassifier {
    pub svms: Vec<LinearModel>,
}

pub fn hash_classify_train(
    codes: &[BitCode],
    labels: &[usize],
    num_classes: usize,
    lambda: f64,
    cfg: &SvmConfig,
) -> Result<HashClassifier, HashError> {
    let feats: Vec<Vec<f64>> = codes.iter().map(|c| c.to_pm1()).collect();
    let svms = ova_train(&feats, labels, num_classes, lambda, cfg)?;
    Ok(HashClassifier { svms })
}

pub fn hash_classify(classifier: &HashClassifier, code: &BitCode) -> usize {
    let x = code.to_pm1();
    let scores: Vec<f64> = classifier.svms.iter().map(|m| m.score(&x)).collect();
    argmax_class(&scores)
}

// ---------------------------------------------------------------------------
// Packed code serialization
// ---------------------------------------------------------------------------

/// Packs codes as rows of ⌈P/8⌉ bytes after a small header.
pub fn codes_to_bytes(method: HashMethod, dim: usize, codes: &[BitCode]) -> Vec<u8> {
    let p = codes.first().map_or(0, |c| c.len());
    let mut out = Vec::new();
    out.extend_from_slice(b"CODS");
    out.push(match method {
        HashMethod::Lsh => 0,
        HashMethod::Klsh => 1,
        HashMethod::Sph => 2,
        HashMethod::Itq => 3,
    });
    out.extend_from_slice(&(p as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(codes.len() as u32).to_le_bytes());
    let row_bytes = p.div_ceil(8);
    for code in codes {
        assert_eq!(code.len(), p, "ragged code rows");
        let mut row = vec![0u8; row_bytes];
        for (i, &bit) in code.bits.iter().enumerate() {
            if bit {
                row[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    out
}

pub fn codes_from_bytes(bytes: &[u8]) -> Option<(HashMethod, usize, Vec<BitCode>)> {
    if bytes.len() < 17 || &bytes[0..4] != b"CODS" {
        return None;
    }
    let method = match bytes[4] {
        0 => HashMethod::Lsh,
        1 => HashMethod::Klsh,
        2 => HashMethod::Sph,
        3 => HashMethod::Itq,
        _ => return None,
    };
    let p = u32::from_le_bytes(bytes[5..9].try_into().ok()?) as usize;
    let dim = u32::from_le_bytes(bytes[9..13].try_into().ok()?) as usize;
    let count = u32::from_le_bytes(bytes[13..17].try_into().ok()?) as usize;
    let row_bytes = p.div_ceil(8);
    if bytes.len() != 17 + count * row_bytes {
        return None;
    }
    let mut codes = Vec::with_capacity(count);
    for r in 0..count {
        let row = &bytes[17 + r * row_bytes..17 + (r + 1) * row_bytes];
        let bits = (0..p).map(|i| row[i / 8] & (1 << (i % 8)) != 0).collect();
        codes.push(BitCode { bits });
    }
    Some((method, dim, codes))
}
