//! Small deterministic regressors used by the config parser and the
//! coefficient regressor.
//!
//! Inputs are always log-transformed workload quantities. Targets whose
//! training values share a sign are fit in log-magnitude space (power laws
//! become linear); mixed-sign targets are fit directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FitError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorKind {
    #[default]
    Ridge,
    Trees,
}

impl std::str::FromStr for RegressorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ridge" => Ok(RegressorKind::Ridge),
            "trees" => Ok(RegressorKind::Trees),
            other => Err(format!(
                "unknown regressor \"{other}\" (expected ridge or trees)"
            )),
        }
    }
}

/// Ridge penalties tried by leave-one-out selection, on standardized inputs.
pub const RIDGE_LAMBDAS: [f64; 7] = [1e-8, 1e-6, 1e-4, 1e-2, 1e-1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub lambda: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl Ridge {
    pub fn fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Self {
        Self::fit_columns(x, y, lambda, |_| true)
    }

    /// Fits on the columns accepted by `use_column`; the others get no weight.
    pub fn fit_columns(
        x: &[Vec<f64>],
        y: &[f64],
        lambda: f64,
        use_column: impl Fn(usize) -> bool,
    ) -> Self {
        let n = x.len();
        let d = x[0].len();
        let mean: Vec<f64> = (0..d)
            .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if v > 1e-24 && use_column(j) {
                    v.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let z = DMatrix::from_fn(n, d, |r, c| {
            if scale[c] > 0.0 {
                (x[r][c] - mean[c]) / scale[c]
            } else {
                0.0
            }
        });
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let mut gram = z.transpose() * &z;
        for j in 0..d {
            gram[(j, j)] += lambda * n as f64 + if scale[j] > 0.0 { 0.0 } else { 1.0 };
        }
        let rhs = z.transpose() * yc;
        let w = gram
            .cholesky()
            .map(|c| c.solve(&rhs))
            .unwrap_or_else(|| DVector::zeros(d));
        Ridge {
            lambda,
            mean,
            scale,
            weights: w.iter().copied().collect(),
            intercept: y_mean,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + x.iter()
                .enumerate()
                .filter(|(j, _)| self.scale[*j] > 0.0)
                .map(|(j, v)| self.weights[j] * (v - self.mean[j]) / self.scale[j])
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    fn grow(x: &[Vec<f64>], r: &[f64], rows: &[usize], depth: usize) -> TreeNode {
        let mean = rows.iter().map(|&i| r[i]).sum::<f64>() / rows.len() as f64;
        if depth == 0 || rows.len() < 2 {
            return TreeNode::Leaf { value: mean };
        }
        let base: f64 = rows.iter().map(|&i| (r[i] - mean).powi(2)).sum();
        let mut best: Option<(f64, usize, f64)> = None;
        let n_features = x[0].len();
        #[allow(clippy::needless_range_loop)]
        for j in 0..n_features {
            let mut vals: Vec<f64> = rows.iter().map(|&i| x[i][j]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).expect("finite feature"));
            vals.dedup();
            for w in vals.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let (l, rt): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][j] <= thr);
                let sse = |idx: &[usize]| {
                    let m = idx.iter().map(|&i| r[i]).sum::<f64>() / idx.len() as f64;
                    idx.iter().map(|&i| (r[i] - m).powi(2)).sum::<f64>()
                };
                let s = sse(&l) + sse(&rt);
                if best.is_none_or(|(b, _, _)| s < b - 1e-15) {
                    best = Some((s, j, thr));
                }
            }
        }
        match best {
            Some((s, j, thr)) if s < base - 1e-15 => {
                let (l, rt): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][j] <= thr);
                TreeNode::Split {
                    feature: j,
                    threshold: thr,
                    left: Box::new(TreeNode::grow(x, r, &l, depth - 1)),
                    right: Box::new(TreeNode::grow(x, r, &rt, depth - 1)),
                }
            }
            _ => TreeNode::Leaf { value: mean },
        }
    }
}

/// Gradient-boosted regression trees with squared loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeNode>,
}

impl BoostedTrees {
    pub const ROUNDS: usize = 200;
    pub const DEPTH: usize = 3;
    pub const LEARNING_RATE: f64 = 0.1;

    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Self {
        let base = y.iter().sum::<f64>() / y.len() as f64;
        let mut pred = vec![base; y.len()];
        let rows: Vec<usize> = (0..y.len()).collect();
        let mut trees = Vec::with_capacity(Self::ROUNDS);
        for _ in 0..Self::ROUNDS {
            let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
            if resid.iter().all(|r| r.abs() < 1e-12) {
                break;
            }
            let tree = TreeNode::grow(x, &resid, &rows, Self::DEPTH);
            for (i, p) in pred.iter_mut().enumerate() {
                *p += Self::LEARNING_RATE * tree.predict(&x[i]);
            }
            trees.push(tree);
        }
        Self {
            base,
            learning_rate: Self::LEARNING_RATE,
            trees,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regressor {
    Ridge(Ridge),
    Trees(BoostedTrees),
}

impl Regressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Regressor::Ridge(r) => r.predict(x),
            Regressor::Trees(t) => t.predict(x),
        }
    }
}

/// How a target is mapped before regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    /// All training values > 0: regress `ln y`.
    LogPositive,
    /// All training values < 0: regress `ln(-y)`.
    LogNegative,
    Identity,
}

impl TargetTransform {
    fn choose(y: &[f64]) -> Self {
        if y.iter().all(|v| *v > 0.0) {
            TargetTransform::LogPositive
        } else if y.iter().all(|v| *v < 0.0) {
            TargetTransform::LogNegative
        } else {
            TargetTransform::Identity
        }
    }

    fn forward(self, v: f64) -> f64 {
        match self {
            TargetTransform::LogPositive => v.ln(),
            TargetTransform::LogNegative => (-v).ln(),
            TargetTransform::Identity => v,
        }
    }

    fn inverse(self, v: f64) -> f64 {
        match self {
            TargetTransform::LogPositive => v.exp(),
            TargetTransform::LogNegative => -v.exp(),
            TargetTransform::Identity => v,
        }
    }
}

/// Regressor for one scalar target over log inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub transform: TargetTransform,
    pub regressor: Regressor,
}

impl TargetModel {
    /// Fits one target.
    ///
    /// The linear family is chosen by leave-one-out error among an
    /// intercept-only model, single-feature least squares on each input, and
    /// ridge over all inputs at each penalty in [`RIDGE_LAMBDAS`]. Equal
    /// scores keep the earlier (simpler) candidate.
    pub fn fit(kind: RegressorKind, log_x: &[Vec<f64>], y: &[f64]) -> Result<Self, FitError> {
        if log_x.is_empty() || log_x.len() != y.len() {
            return Err(FitError::Underdetermined {
                what: "regressor: no training rows".into(),
            });
        }
        let transform = TargetTransform::choose(y);
        let t: Vec<f64> = y.iter().map(|v| transform.forward(*v)).collect();
        let make = |regressor| TargetModel {
            transform,
            regressor,
        };
        if kind == RegressorKind::Trees {
            return Ok(make(Regressor::Trees(BoostedTrees::fit(log_x, &t))));
        }
        let d = log_x[0].len();
        let mut candidates: Vec<Candidate> = vec![Candidate::Mean];
        candidates.extend((0..d).map(Candidate::Single));
        candidates.extend(RIDGE_LAMBDAS.iter().map(|&l| Candidate::All(l)));
        let mut best = (f64::INFINITY, Candidate::Mean);
        for c in candidates {
            let e = loo_error(log_x, &t, c);
            if e < best.0 - 1e-12 * best.0.abs().min(1e300) {
                best = (e, c);
            }
        }
        Ok(make(Regressor::Ridge(best.1.fit(log_x, &t))))
    }

    pub fn predict(&self, log_x: &[f64]) -> f64 {
        self.transform.inverse(self.regressor.predict(log_x))
    }
}

#[derive(Debug, Clone, Copy)]
enum Candidate {
    Mean,
    Single(usize),
    All(f64),
}

impl Candidate {
    fn fit(self, x: &[Vec<f64>], t: &[f64]) -> Ridge {
        match self {
            Candidate::Mean => Ridge::fit_columns(x, t, 0.0, |_| false),
            Candidate::Single(j) => Ridge::fit_columns(x, t, RIDGE_LAMBDAS[0], |c| c == j),
            Candidate::All(lambda) => Ridge::fit(x, t, lambda),
        }
    }
}

fn loo_error(x: &[Vec<f64>], t: &[f64], candidate: Candidate) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    (0..x.len())
        .map(|i| {
            let xs: Vec<Vec<f64>> = x
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| r.clone())
                .collect();
            let ts: Vec<f64> = t
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| *v)
                .collect();
            let e = candidate.fit(&xs, &ts).predict(&x[i]) - t[i];
            if e.is_finite() {
                e * e
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// `ln` of each input, floored so zero counts stay finite.
pub fn log_inputs(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.max(1e-12).ln()).collect()
}
