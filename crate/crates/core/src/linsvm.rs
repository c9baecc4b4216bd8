//! Weighted one-vs-all linear SVM solver.
//!
//! Minimizes ½‖w‖² + (λ/N)·Σ_i v_i·hinge(y_i(w·x_i + b)). The bias is not
//! regularized. The dual then carries the equality constraint Σ α_i y_i = 0,
//! solved by maximal-violating-pair updates (SMO). Pair selection costs a
//! full gradient refresh per step, so for large problems an alternating
//! scheme (dual coordinate descent in w with b fixed, then an exact
//! piecewise-linear line search in b) runs first and the SMO polish is
//! skipped above `POLISH_MAX_N` rows.

use rand::prelude::*;
use rayon::prelude::*;
use thiserror::Error;

use crate::numeric::{axpy, dot, norm_sq};

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("labels must contain both classes (all-one-class problem)")]
    AllOneClass,
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// A binary weighted hinge problem over borrowed feature rows.
pub struct SvmProblem<'a> {
    pub features: Vec<&'a [f64]>,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub fit_bias: bool,
}

impl<'a> SvmProblem<'a> {
    pub fn new(features: Vec<&'a [f64]>, labels: Vec<f64>, lambda: f64) -> Self {
        let n = features.len();
        SvmProblem { features, labels, weights: vec![1.0; n], lambda, fit_bias: true }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.fit_bias = false;
        self
    }

    fn validate(&self) -> Result<(), SvmError> {
        let n = self.features.len();
        if n == 0 {
            return Err(SvmError::Invalid("no rows".into()));
        }
        if self.labels.len() != n || self.weights.len() != n {
            return Err(SvmError::Invalid("labels/weights length mismatch".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(SvmError::Invalid(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(SvmError::Invalid("labels must be ±1".into()));
        }
        if self.weights.iter().any(|&v| !(v >= 0.0)) {
            return Err(SvmError::Invalid("weights must be >= 0".into()));
        }
        let dim = self.features[0].len();
        if self.features.iter().any(|r| r.len() != dim) {
            return Err(SvmError::Invalid("ragged feature rows".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn zero(dim: usize) -> Self {
        LinearModel { w: vec![0.0; dim], b: 0.0 }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SvmConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { tol: 1e-6, max_iter: 40_000, seed: 0 }
    }
}

pub fn hinge(margin: f64) -> f64 {
    (1.0 - margin).max(0.0)
}

/// Regularized weighted hinge objective of `model` on `problem`.
pub fn svm_objective(problem: &SvmProblem, model: &LinearModel) -> f64 {
    let n = problem.features.len() as f64;
    let mut loss = 0.0;
    for ((x, &y), &v) in problem.features.iter().zip(&problem.labels).zip(&problem.weights) {
        let margin = y * (dot(&model.w, x) + if problem.fit_bias { model.b } else { 0.0 });
        loss += v * hinge(margin);
    }
    0.5 * norm_sq(&model.w) + problem.lambda / n * loss
}

/// Above this many rows the SMO polish is skipped and the alternating
/// solution is returned as-is.
const POLISH_MAX_N: usize = 2000;

pub fn svm_train(problem: &SvmProblem, cfg: &SvmConfig) -> Result<LinearModel, SvmError> {
    problem.validate()?;
    let dim = problem.features[0].len();
    if problem.weights.iter().all(|&v| v == 0.0) {
        // Loss term vanishes; the regularizer alone is minimized by zero.
        return Ok(LinearModel::zero(dim));
    }
    let has_pos = problem.labels.iter().any(|&y| y > 0.0);
    let has_neg = problem.labels.iter().any(|&y| y < 0.0);
    if !(has_pos && has_neg) {
        return Err(SvmError::AllOneClass);
    }

    let n = problem.features.len();
    let costs: Vec<f64> =
        problem.weights.iter().map(|&v| problem.lambda / n as f64 * v).collect();

    let model = if problem.fit_bias {
        let mut state = DualState::new(problem, &costs);
        state.alternating(cfg);
        if n <= POLISH_MAX_N {
            state.smo_polish(cfg);
        }
        state.into_model()
    } else {
        solve_no_bias(problem, &costs, cfg)
    };

    // Never hand back something worse than the zero model.
    let zero = LinearModel::zero(dim);
    if svm_objective(problem, &model) > svm_objective(problem, &zero) {
        return Ok(zero);
    }
    Ok(model)
}

struct DualState<'p, 'a> {
    problem: &'p SvmProblem<'a>,
    costs: &'p [f64],
    alpha: Vec<f64>,
    w: Vec<f64>,
    b: f64,
    qd: Vec<f64>,
}

impl<'p, 'a> DualState<'p, 'a> {
    fn new(problem: &'p SvmProblem<'a>, costs: &'p [f64]) -> Self {
        let dim = problem.features[0].len();
        let qd = problem.features.iter().map(|x| norm_sq(x)).collect();
        DualState {
            problem,
            costs,
            alpha: vec![0.0; problem.features.len()],
            w: vec![0.0; dim],
            b: 0.0,
            qd,
        }
    }

    /// Dual coordinate descent on w with b frozen (per-row margin targets
    /// 1 − y_i b), then an exact 1-D minimization over b, repeated until the
    /// objective settles.
    fn alternating(&mut self, cfg: &SvmConfig) {
        let n = self.problem.features.len();
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut prev_obj = f64::INFINITY;
        let rounds = 60;
        for _ in 0..rounds {
            for _ in 0..10 {
                order.shuffle(&mut rng);
                let mut max_pg = 0.0f64;
                for &i in &order {
                    let c = self.costs[i];
                    if c == 0.0 || self.qd[i] == 0.0 {
                        continue;
                    }
                    let y = self.problem.labels[i];
                    let rho = 1.0 - y * self.b;
                    let g = y * dot(&self.w, self.problem.features[i]) - rho;
                    let pg = projected_gradient(g, self.alpha[i], c);
                    if pg.abs() > 1e-14 {
                        max_pg = max_pg.max(pg.abs());
                        let old = self.alpha[i];
                        self.alpha[i] = (old - g / self.qd[i]).clamp(0.0, c);
                        axpy((self.alpha[i] - old) * y, self.problem.features[i], &mut self.w);
                    }
                }
                if max_pg < cfg.tol {
                    break;
                }
            }
            self.b = optimal_bias(self.problem, self.costs, &self.w);
            let obj = self.primal_objective();
            if (prev_obj - obj).abs() <= cfg.tol * (1.0 + obj.abs()) {
                break;
            }
            prev_obj = obj;
        }
    }

    fn primal_objective(&self) -> f64 {
        let mut loss = 0.0;
        for ((x, &y), &c) in
            self.problem.features.iter().zip(&self.problem.labels).zip(self.costs)
        {
            loss += c * hinge(y * (dot(&self.w, x) + self.b));
        }
        0.5 * norm_sq(&self.w) + loss
    }

    /// Maximal-violating-pair SMO on the equality-constrained dual. Gradients
    /// are recomputed from w each step, so this is O(N·D) per update and is
    /// reserved for problems small enough to afford it.
    fn smo_polish(&mut self, cfg: &SvmConfig) {
        let n = self.problem.features.len();
        // Re-enter the constrained dual from a feasible point: zero is the
        // only alpha that is always feasible for Σ α y = 0 given arbitrary
        // coordinate-descent output, so restart alpha but keep nothing stale.
        let mut alpha = vec![0.0; n];
        let mut w = vec![0.0; self.w.len()];
        let labels = &self.problem.labels;
        let feats = &self.problem.features;
        let mut scores: Vec<f64> = vec![0.0; n];
        let tau = 1e-12;
        let mut m_last = (0.0, 0.0);
        let mut converged = false;
        for _ in 0..cfg.max_iter {
            // t_i = y_i − w·x_i; the optimal b is pinched between I_up and I_low.
            let mut up_best: Option<(f64, usize)> = None;
            let mut low_best: Option<(f64, usize)> = None;
            for i in 0..n {
                let c = self.costs[i];
                if c == 0.0 {
                    continue;
                }
                let t = labels[i] - scores[i];
                let in_up = (labels[i] > 0.0 && alpha[i] < c) || (labels[i] < 0.0 && alpha[i] > 0.0);
                let in_low = (labels[i] > 0.0 && alpha[i] > 0.0) || (labels[i] < 0.0 && alpha[i] < c);
                if in_up && up_best.map_or(true, |(bt, _)| t > bt) {
                    up_best = Some((t, i));
                }
                if in_low && low_best.map_or(true, |(bt, _)| t < bt) {
                    low_best = Some((t, i));
                }
            }
            let (m, i) = match up_best {
                Some(v) => v,
                None => {
                    converged = true;
                    break;
                }
            };
            let (mm, j) = match low_best {
                Some(v) => v,
                None => {
                    converged = true;
                    break;
                }
            };
            m_last = (m, mm);
            if m - mm <= cfg.tol {
                converged = true;
                break;
            }
            let (yi, yj) = (labels[i], labels[j]);
            let kij = dot(feats[i], feats[j]);
            let mut quad = self.qd[i] + self.qd[j] - 2.0 * yi * yj * kij;
            if quad <= 0.0 {
                quad = tau;
            }
            let gi = yi * scores[i] - 1.0;
            let gj = yj * scores[j] - 1.0;
            let (old_i, old_j) = (alpha[i], alpha[j]);
            if yi != yj {
                let delta = (-gi - gj) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 && alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                } else if diff <= 0.0 && alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > self.costs[i] - self.costs[j] {
                    if alpha[i] > self.costs[i] {
                        alpha[i] = self.costs[i];
                        alpha[j] = self.costs[i] - diff;
                    }
                } else if alpha[j] > self.costs[j] {
                    alpha[j] = self.costs[j];
                    alpha[i] = self.costs[j] + diff;
                }
            } else {
                let delta = (gi - gj) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > self.costs[i] {
                    if alpha[i] > self.costs[i] {
                        alpha[i] = self.costs[i];
                        alpha[j] = sum - self.costs[i];
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > self.costs[j] {
                    if alpha[j] > self.costs[j] {
                        alpha[j] = self.costs[j];
                        alpha[i] = sum - self.costs[j];
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let di = (alpha[i] - old_i) * yi;
            let dj = (alpha[j] - old_j) * yj;
            if di != 0.0 {
                axpy(di, feats[i], &mut w);
            }
            if dj != 0.0 {
                axpy(dj, feats[j], &mut w);
            }
            if di != 0.0 || dj != 0.0 {
                for (s, x) in scores.iter_mut().zip(feats.iter()) {
                    *s = dot(&w, x);
                }
            }
        }
        let b = if converged {
            match (m_last, ()) {
                ((m, mm), ()) if m != 0.0 || mm != 0.0 => 0.5 * (m + mm),
                _ => 0.0,
            }
        } else {
            0.5 * (m_last.0 + m_last.1)
        };
        // One-sided problems leave b free; pick the loss-zeroing value.
        let b = refine_bias_edges(self.problem, self.costs, &w, b);
        let candidate = LinearModel { w: w.clone(), b };
        let current = LinearModel { w: self.w.clone(), b: self.b };
        if svm_objective(self.problem, &candidate) <= svm_objective(self.problem, &current) {
            self.w = w;
            self.b = b;
            self.alpha = alpha;
        }
    }

    fn into_model(self) -> LinearModel {
        LinearModel { w: self.w, b: self.b }
    }
}

fn projected_gradient(g: f64, alpha: f64, c: f64) -> f64 {
    if alpha <= 0.0 {
        g.min(0.0)
    } else if alpha >= c {
        g.max(0.0)
    } else {
        g
    }
}

/// Exact minimizer over b of Σ c_i hinge(y_i(w·x_i + b)): a weighted-median
/// sweep over the hinge breakpoints.
fn optimal_bias(problem: &SvmProblem, costs: &[f64], w: &[f64]) -> f64 {
    // Loss as a function of b has slope Σ_{y=+1 active} -c + Σ_{y=-1 active} c.
    // Breakpoints sit at b = y_i - w·x_i.
    let mut points: Vec<(f64, f64)> = Vec::new(); // (breakpoint, slope change)
    let mut slope = 0.0; // slope at b = -inf
    for ((x, &y), &c) in problem.features.iter().zip(&problem.labels).zip(costs) {
        if c == 0.0 {
            continue;
        }
        let bp = y - dot(w, x);
        if y > 0.0 {
            // hinge active for b < bp; slope -c before, 0 after
            slope -= c;
            points.push((bp, c));
        } else {
            // hinge active for b > bp; slope 0 before, +c after
            points.push((bp, c));
        }
    }
    if points.is_empty() {
        return 0.0;
    }
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut best = points[0].0;
    let mut cur_slope = slope;
    for k in 0..points.len() {
        let (bp, dc) = points[k];
        // Positive-label hinges deactivate (+c), negative-label activate (+c):
        // both add dc at their breakpoint, ordering by y handled above.
        cur_slope += dc;
        best = bp;
        if cur_slope >= 0.0 {
            break;
        }
    }
    best
}

/// If one side has no weight, the SMO bias estimate is arbitrary; snap to the
/// exact 1-D optimum.
fn refine_bias_edges(problem: &SvmProblem, costs: &[f64], w: &[f64], b: f64) -> f64 {
    let exact = optimal_bias(problem, costs, w);
    // Keep whichever bias gives the lower loss (w is fixed either way).
    let loss_at = |bb: f64| -> f64 {
        problem
            .features
            .iter()
            .zip(&problem.labels)
            .zip(costs)
            .map(|((x, &y), &c)| c * hinge(y * (dot(w, x) + bb)))
            .sum()
    };
    if loss_at(exact) < loss_at(b) {
        exact
    } else {
        b
    }
}

/// Weighted hinge fit without a bias term and without the class-balance
/// check: one-sided label sets are well-posed here. Used for basis-column
/// updates, where the surrogate labels routinely collapse to one sign.
pub fn svm_train_hinge_no_bias(problem: &SvmProblem, cfg: &SvmConfig) -> LinearModel {
    let dim = problem.features.first().map_or(0, |r| r.len());
    if problem.weights.iter().all(|&v| v == 0.0) {
        return LinearModel::zero(dim);
    }
    let n = problem.features.len();
    let costs: Vec<f64> =
        problem.weights.iter().map(|&v| problem.lambda / n as f64 * v).collect();
    solve_no_bias(problem, &costs, cfg)
}

/// Dual coordinate descent without a bias term (box constraints only).
fn solve_no_bias(problem: &SvmProblem, costs: &[f64], cfg: &SvmConfig) -> LinearModel {
    let n = problem.features.len();
    let dim = problem.features[0].len();
    let qd: Vec<f64> = problem.features.iter().map(|x| norm_sq(x)).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let sweeps = cfg.max_iter.div_ceil(n.max(1)).max(2);
    for _ in 0..sweeps {
        order.shuffle(&mut rng);
        let mut max_pg = 0.0f64;
        for &i in &order {
            let c = costs[i];
            if c == 0.0 || qd[i] == 0.0 {
                continue;
            }
            let y = problem.labels[i];
            let g = y * dot(&w, problem.features[i]) - 1.0;
            let pg = projected_gradient(g, alpha[i], c);
            if pg.abs() > 1e-14 {
                max_pg = max_pg.max(pg.abs());
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, c);
                axpy((alpha[i] - old) * y, problem.features[i], &mut w);
            }
        }
        if max_pg < cfg.tol {
            break;
        }
    }
    LinearModel { w, b: 0.0 }
}

/// Trains K one-vs-all models: model k sees label +1 exactly on samples of
/// class k. Classes train independently (and in parallel).
pub fn ova_train(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    lambda: f64,
    cfg: &SvmConfig,
) -> Result<Vec<LinearModel>, SvmError> {
    if num_classes < 2 {
        return Err(SvmError::Invalid(format!("need K >= 2 classes, got {num_classes}")));
    }
    if features.len() != labels.len() {
        return Err(SvmError::Invalid("features/labels length mismatch".into()));
    }
    for k in 0..num_classes {
        if !labels.iter().any(|&l| l == k) {
            return Err(SvmError::EmptyClass(k));
        }
    }
    (0..num_classes)
        .into_par_iter()
        .map(|k| {
            let rows: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
            let ys: Vec<f64> =
                labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
            let problem = SvmProblem::new(rows, ys, lambda);
            let sub_cfg = SvmConfig { seed: cfg.seed.wrapping_add(k as u64), ..*cfg };
            svm_train(&problem, &sub_cfg)
        })
        .collect()
}

/// Argmax over per-class scores, ties to the lowest class index.
pub fn argmax_class(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SvmConfig {
        SvmConfig { tol: 1e-9, max_iter: 200_000, seed: 1 }
    }

    #[test]
    fn separable_symmetric_pair() {
        let xs = [vec![-1.0], vec![1.0]];
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let problem = SvmProblem::new(rows, vec![-1.0, 1.0], 1000.0);
        let model = svm_train(&problem, &cfg()).unwrap();
        assert!(model.w[0] > 0.0);
        assert!(model.score(&[-1.0]) < 0.0);
        assert!(model.score(&[1.0]) > 0.0);
        // margin-1 solution: w = 1, b = 0
        assert!((model.w[0] - 1.0).abs() < 1e-6, "w = {}", model.w[0]);
        assert!(model.b.abs() < 1e-6);
    }

    #[test]
    fn zero_weights_give_zero_model() {
        let xs = [vec![1.0, 2.0], vec![-3.0, 0.5]];
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let problem =
            SvmProblem::new(rows, vec![1.0, -1.0], 10.0).with_weights(vec![0.0, 0.0]);
        let model = svm_train(&problem, &cfg()).unwrap();
        assert_eq!(model.w, vec![0.0, 0.0]);
        assert_eq!(model.b, 0.0);
    }

    #[test]
    fn all_one_class_errors() {
        let xs = [vec![1.0], vec![2.0]];
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let problem = SvmProblem::new(rows, vec![1.0, 1.0], 10.0);
        assert_eq!(svm_train(&problem, &cfg()).unwrap_err(), SvmError::AllOneClass);
    }

    #[test]
    fn objective_trivia() {
        let xs = [vec![0.5], vec![1.5], vec![2.5]];
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let problem = SvmProblem::new(rows, vec![1.0, 1.0, 1.0], 7.0);
        // all-zero model, hinge(0) = 1 everywhere: objective = lambda
        let z = LinearModel::zero(1);
        assert!((svm_objective(&problem, &z) - 7.0).abs() < 1e-12);
        // perfectly separated with margin >= 1: loss term exactly 0
        let rows2: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let problem2 = SvmProblem::new(rows2, vec![-1.0, 1.0, 1.0], 7.0);
        let m = LinearModel { w: vec![2.0], b: -2.0 };
        assert_eq!(svm_objective(&problem2, &m), 0.5 * 4.0);
    }

    #[test]
    fn objective_matches_term_by_term_oracle() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(1..10);
            let d = rng.gen_range(1..5);
            let xs: Vec<Vec<f64>> =
                (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            let labels: Vec<f64> =
                (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let lambda = rng.gen_range(0.1..20.0);
            let model = LinearModel {
                w: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                b: rng.gen_range(-1.0..1.0),
            };
            let problem =
                SvmProblem::new(rows, labels.clone(), lambda).with_weights(weights.clone());
            let fast = svm_objective(&problem, &model);
            let mut slow = 0.0;
            for i in 0..n {
                let mut s = model.b;
                for t in 0..d {
                    s += model.w[t] * xs[i][t];
                }
                slow += weights[i] * (1.0 - labels[i] * s).max(0.0);
            }
            slow = slow * lambda / n as f64;
            for t in 0..d {
                slow += 0.5 * model.w[t] * model.w[t];
            }
            assert!((fast - slow).abs() <= 1e-12 * (1.0 + slow.abs()));
        }
    }

    #[test]
    fn weight_scaling_equals_lambda_scaling() {
        let mut rng = StdRng::seed_from_u64(4);
        let xs: Vec<Vec<f64>> =
            (0..12).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<f64> =
            (0..12).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let weights: Vec<f64> = (0..12).map(|_| rng.gen_range(0.1..2.0)).collect();
        let c = 3.0;
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let p1 = SvmProblem::new(rows, labels.clone(), 5.0)
            .with_weights(weights.iter().map(|v| v * c).collect());
        let rows2: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let p2 =
            SvmProblem::new(rows2, labels.clone(), 5.0 * c).with_weights(weights.clone());
        let m1 = svm_train(&p1, &cfg()).unwrap();
        let m2 = svm_train(&p2, &cfg()).unwrap();
        for (a, b) in m1.w.iter().zip(&m2.w) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        assert!((m1.b - m2.b).abs() < 1e-3);
        // objectives relate exactly when evaluated crosswise
        let o1 = svm_objective(&p1, &m1);
        let o2 = svm_objective(&p2, &m1);
        assert!((o1 - o2).abs() <= 1e-9 * (1.0 + o1.abs()));
    }

    #[test]
    fn no_bias_path_solves_separable() {
        let xs = [vec![2.0, 0.0], vec![-2.0, 0.0], vec![3.0, 1.0], vec![-3.0, -1.0]];
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let problem = SvmProblem::new(rows, vec![1.0, -1.0, 1.0, -1.0], 500.0).without_bias();
        let model = svm_train(&problem, &cfg()).unwrap();
        assert_eq!(model.b, 0.0);
        for (x, y) in xs.iter().zip([1.0, -1.0, 1.0, -1.0]) {
            assert!(y * model.score(x) >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn ova_basics() {
        // K=2: scores rank oppositely on any point
        let feats: Vec<Vec<f64>> =
            vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.1, 0.9]];
        let labels = vec![0, 0, 1, 1];
        let models = ova_train(&feats, &labels, 2, 100.0, &cfg()).unwrap();
        for p in [vec![0.7, 0.3], vec![0.2, 0.8], vec![0.5, 0.5]] {
            let s0 = models[0].score(&p);
            let s1 = models[1].score(&p);
            // complementary labels: the two scores order any pair of points oppositely
            let q = vec![1.0 - p[0], 1.0 - p[1]];
            let t0 = models[0].score(&q);
            let t1 = models[1].score(&q);
            assert_eq!(s0 > t0, t1 > s1, "at {p:?}");
        }
        assert!(ova_train(&feats, &labels, 3, 100.0, &cfg()).is_err());
        assert!(ova_train(&feats, &labels, 1, 100.0, &cfg()).is_err());
    }

    #[test]
    fn ova_class_independence_and_determinism() {
        let mut rng = StdRng::seed_from_u64(11);
        let feats: Vec<Vec<f64>> =
            (0..30).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let a = ova_train(&feats, &labels, 3, 10.0, &cfg()).unwrap();
        let b = ova_train(&feats, &labels, 3, 10.0, &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trained_never_worse_than_zero_model() {
        let mut rng = StdRng::seed_from_u64(21);
        for trial in 0..30 {
            let n = rng.gen_range(2..12);
            let d = rng.gen_range(1..4);
            let xs: Vec<Vec<f64>> =
                (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            let mut labels: Vec<f64> =
                (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
            labels[0] = 1.0;
            if n > 1 {
                labels[1] = -1.0;
            }
            let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            let lambda = rng.gen_range(0.5..50.0);
            let problem =
                SvmProblem::new(rows, labels, lambda).with_weights(weights);
            let model = match svm_train(&problem, &cfg()) {
                Ok(m) => m,
                Err(SvmError::AllOneClass) => continue,
                Err(e) => panic!("trial {trial}: {e}"),
            };
            let zero = LinearModel::zero(d);
            assert!(
                svm_objective(&problem, &model)
                    <= svm_objective(&problem, &zero) + 1e-9,
                "trial {trial}"
            );
        }
    }
}
