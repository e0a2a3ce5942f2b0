use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::{check_training, sigmoid, EnsembleError, Features, Result};
use crate::rng::stream;

const MAX_NEWTON_ITERS: usize = 200;

/// L2-penalised logistic regression fitted by damped Newton steps on
/// `mean log-loss + λ/2·|w|²` (the intercept is not penalised).
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

fn log_loss(x: &Features, y: &[u8], beta: &DVector<f64>, lambda: f64) -> f64 {
    let d = x.d();
    let mut total = 0.0;
    for i in 0..x.n() {
        let z = beta[d] + x.row(i).iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>();
        // log(1 + e^z) − y·z, computed stably
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        total += softplus - f64::from(y[i]) * z;
    }
    total / x.n() as f64 + 0.5 * lambda * beta.rows(0, d).norm_squared()
}

impl LogisticRegression {
    pub fn fit(x: &Features, y: &[u8], lambda: f64, tol: f64) -> Result<Self> {
        check_training(x, y)?;
        if lambda < 0.0 || !(tol > 0.0) {
            return Err(EnsembleError::Parameter(format!("lambda {lambda} / tol {tol} invalid")));
        }
        let (n, d) = (x.n(), x.d());
        let mut beta = DVector::<f64>::zeros(d + 1);
        let mut loss = log_loss(x, y, &beta, lambda);
        let mut iterations = 0;
        while iterations < MAX_NEWTON_ITERS {
            iterations += 1;
            let mut grad = DVector::<f64>::zeros(d + 1);
            let mut hess = DMatrix::<f64>::zeros(d + 1, d + 1);
            for i in 0..n {
                let mut row = DVector::from_column_slice(x.row(i)).resize_vertically(d + 1, 0.0);
                row[d] = 1.0;
                let p = sigmoid(row.dot(&beta));
                grad.axpy((p - f64::from(y[i])) / n as f64, &row, 1.0);
                hess.ger(p * (1.0 - p) / n as f64, &row, &row, 1.0);
            }
            for j in 0..d {
                grad[j] += lambda * beta[j];
                hess[(j, j)] += lambda;
            }
            hess[(d, d)] += 1e-12;
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => hess.lu().solve(&grad).ok_or_else(|| EnsembleError::Parameter("singular Hessian".into()))?,
            };
            let mut t = 1.0;
            let mut next = &beta - &step * t;
            let mut next_loss = log_loss(x, y, &next, lambda);
            while next_loss > loss && t > 1e-10 {
                t *= 0.5;
                next = &beta - &step * t;
                next_loss = log_loss(x, y, &next, lambda);
            }
            let moved = (&step * t).amax();
            beta = next;
            loss = next_loss;
            if moved < tol || grad.amax() < tol {
                break;
            }
        }
        Ok(Self { weights: beta.rows(0, d).iter().copied().collect(), bias: beta[d], iterations })
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.bias + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &Features) -> Result<Vec<f64>> {
        x.expect_width(self.weights.len())?;
        Ok((0..x.n()).map(|i| sigmoid(self.decision(x.row(i)))).collect())
    }
}

/// Two-class linear discriminant with pooled covariance `/(n − 2)` plus a ridge.
#[derive(Clone, Debug, PartialEq)]
pub struct Lda {
    pub means: [Vec<f64>; 2],
    /// Row-major `d × d` pooled covariance, ridge included.
    pub covariance: Vec<f64>,
    pub priors: [f64; 2],
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Lda {
    pub fn fit(x: &Features, y: &[u8], ridge: f64) -> Result<Self> {
        check_training(x, y)?;
        let (n, d) = (x.n(), x.d());
        if n < 3 {
            return Err(EnsembleError::Parameter("LDA needs at least 3 rows".into()));
        }
        let mut means = [DVector::<f64>::zeros(d), DVector::<f64>::zeros(d)];
        let mut counts = [0usize; 2];
        for i in 0..n {
            let c = y[i] as usize;
            means[c] += DVector::from_column_slice(x.row(i));
            counts[c] += 1;
        }
        for c in 0..2 {
            means[c] /= counts[c] as f64;
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let r = DVector::from_column_slice(x.row(i)) - &means[y[i] as usize];
            cov.ger(1.0, &r, &r, 1.0);
        }
        cov /= (n - 2) as f64;
        for j in 0..d {
            cov[(j, j)] += ridge;
        }
        let diff = &means[1] - &means[0];
        let w = match cov.clone().cholesky() {
            Some(ch) => ch.solve(&diff),
            None => cov.clone().lu().solve(&diff).ok_or_else(|| EnsembleError::Parameter("singular covariance".into()))?,
        };
        let priors = [counts[0] as f64 / n as f64, counts[1] as f64 / n as f64];
        let bias = -0.5 * (&means[1] + &means[0]).dot(&w) + (priors[1] / priors[0]).ln();
        let covariance = (0..d * d).map(|k| cov[(k / d, k % d)]).collect();
        Ok(Self {
            means: [means[0].iter().copied().collect(), means[1].iter().copied().collect()],
            covariance,
            priors,
            weights: w.iter().copied().collect(),
            bias,
        })
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        self.bias + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &Features) -> Result<Vec<f64>> {
        x.expect_width(self.weights.len())?;
        Ok((0..x.n()).map(|i| sigmoid(self.decision(x.row(i)))).collect())
    }
}

/// Linear hinge-loss SVM trained with Pegasos SGD; probabilities come from a
/// one-feature logistic fit on the training margins.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    /// `d` weights followed by the intercept.
    pub weights: Vec<f64>,
    pub calib_a: f64,
    pub calib_b: f64,
}

impl LinearSvm {
    pub fn fit(x: &Features, y: &[u8], lambda: f64, epochs: usize, seed: u64) -> Result<Self> {
        check_training(x, y)?;
        if !(lambda > 0.0) || epochs == 0 {
            return Err(EnsembleError::Parameter(format!("lambda {lambda} / epochs {epochs} invalid")));
        }
        let (n, d) = (x.n(), x.d());
        let mut w = vec![0.0; d + 1];
        let mut rng = stream(seed, "svm", 0);
        let mut order: Vec<usize> = (0..n).collect();
        let mut t = 0usize;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let s = if y[i] == 1 { 1.0 } else { -1.0 };
                let margin = s * (w[d] + x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>());
                w.iter_mut().for_each(|v| *v *= 1.0 - eta * lambda);
                if margin < 1.0 {
                    for (wj, &xj) in w.iter_mut().zip(x.row(i)) {
                        *wj += eta * s * xj;
                    }
                    w[d] += eta * s;
                }
            }
        }
        let mut svm = Self { weights: w, calib_a: 1.0, calib_b: 0.0 };
        let margins = Features::new(1, (0..n).map(|i| svm.decision(x.row(i))).collect())?;
        let calib = LogisticRegression::fit(&margins, y, 1e-4, 1e-8);
        if let Ok(c) = calib {
            svm.calib_a = c.weights[0];
            svm.calib_b = c.bias;
        }
        Ok(svm)
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        let d = self.weights.len() - 1;
        self.weights[d] + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &Features) -> Result<Vec<f64>> {
        x.expect_width(self.weights.len() - 1)?;
        Ok((0..x.n()).map(|i| sigmoid(self.calib_a * self.decision(x.row(i)) + self.calib_b)).collect())
    }
}
