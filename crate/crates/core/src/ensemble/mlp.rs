use rand::Rng;

use super::{check_training, EnsembleError, Features, Result};
use crate::rng::stream;
use crate::tensor::{AdamConfig, AdamState, Graph, Tensor};

/// One tanh hidden layer and a two-logit softmax output, trained full-batch with Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    pub d: usize,
    pub hidden: usize,
    /// `[w1 (hidden × d), b1, w2 (2 × hidden), b2]`.
    pub params: Vec<Vec<f64>>,
}

fn tensor_err(e: crate::tensor::TensorError) -> EnsembleError {
    EnsembleError::Parameter(format!("mlp: {e}"))
}

impl MlpClassifier {
    fn shapes(d: usize, hidden: usize) -> [Vec<usize>; 4] {
        [vec![hidden, d], vec![hidden], vec![2, hidden], vec![2]]
    }

    pub fn fit(x: &Features, y: &[u8], hidden: usize, lr: f64, epochs: usize, seed: u64) -> Result<Self> {
        check_training(x, y)?;
        if hidden == 0 || epochs == 0 || !(lr > 0.0) {
            return Err(EnsembleError::Parameter(format!("hidden {hidden} / epochs {epochs} / lr {lr} invalid")));
        }
        let d = x.d();
        let mut rng = stream(seed, "mlp", 0);
        let mut params: Vec<Tensor<f64>> = Self::shapes(d, hidden)
            .into_iter()
            .map(|shape| {
                let fan_in = if shape.len() == 2 { shape[1] } else { 0 };
                let bound = if fan_in > 0 { 1.0 / (fan_in as f64).sqrt() } else { 0.0 };
                Tensor::from_fn(&shape, |_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
            })
            .collect();
        let mut adam = AdamState::new(AdamConfig { lr, ..AdamConfig::default() }, params.iter());
        let input = Tensor::new(vec![x.n(), d], x.data().to_vec()).map_err(tensor_err)?;
        let targets: Vec<usize> = y.iter().map(|&l| l as usize).collect();
        for _ in 0..epochs {
            let mut g = Graph::new();
            let xv = g.input(input.clone());
            let pv: Vec<_> = params.iter().map(|p| g.param(p.clone())).collect();
            let loss = (|| {
                let h = g.affine(xv, pv[0], pv[1])?;
                let h = g.tanh(h)?;
                let z = g.affine(h, pv[2], pv[3])?;
                let loss = g.softmax_cross_entropy(z, &targets)?;
                g.backward(loss)?;
                Ok(loss)
            })()
            .map_err(tensor_err)?;
            if !g.value(loss).map_err(tensor_err)?.item().is_finite() {
                return Err(EnsembleError::Parameter("mlp loss diverged".into()));
            }
            let grads: Vec<Tensor<f64>> = pv.iter().map(|&v| g.grad(v)).collect::<std::result::Result<_, _>>().map_err(tensor_err)?;
            let mut refs: Vec<&mut Tensor<f64>> = params.iter_mut().collect();
            adam.step(&mut refs, &grads.iter().collect::<Vec<_>>()).map_err(tensor_err)?;
        }
        Ok(Self { d, hidden, params: params.into_iter().map(Tensor::into_data).collect() })
    }

    pub fn from_params(d: usize, hidden: usize, params: Vec<Vec<f64>>) -> Result<Self> {
        let shapes = Self::shapes(d, hidden);
        if params.len() != 4 || params.iter().zip(&shapes).any(|(p, s)| p.len() != s.iter().product::<usize>()) {
            return Err(EnsembleError::Dimension("mlp parameter sizes do not match its shape".into()));
        }
        Ok(Self { d, hidden, params })
    }

    fn proba_row(&self, row: &[f64]) -> f64 {
        let (w1, b1, w2, b2) = (&self.params[0], &self.params[1], &self.params[2], &self.params[3]);
        let h: Vec<f64> = (0..self.hidden)
            .map(|k| (b1[k] + w1[k * self.d..(k + 1) * self.d].iter().zip(row).map(|(a, b)| a * b).sum::<f64>()).tanh())
            .collect();
        let z = |c: usize| b2[c] + w2[c * self.hidden..(c + 1) * self.hidden].iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
        super::sigmoid(z(1) - z(0))
    }

    pub fn predict_proba(&self, x: &Features) -> Result<Vec<f64>> {
        x.expect_width(self.d)?;
        Ok((0..x.n()).map(|i| self.proba_row(x.row(i))).collect())
    }
}
