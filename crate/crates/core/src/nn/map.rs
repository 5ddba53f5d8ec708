use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};

use super::{dense, dense_backward, Mode};
use crate::error::{check_dim, Error, Result};
use crate::params::{LayerShape, ParamBlock};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept by the running statistics at each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingConfig {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub batch_norm: bool,
    /// Dropout keep probability; `1.0` disables dropout.
    pub keep_prob: f64,
}

impl MappingConfig {
    pub fn plain(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input,
            hidden,
            classes,
            batch_norm: false,
            keep_prob: 1.0,
        }
    }

    pub fn dropout_active(&self) -> bool {
        self.keep_prob < 1.0
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut layers = vec![LayerShape::dense(self.input, self.hidden)];
        if self.batch_norm {
            // gamma as a 1 x hidden "weight", beta as its bias
            layers.push(LayerShape {
                rows: 1,
                cols: self.hidden,
                bias: self.hidden,
            });
        }
        layers.push(LayerShape::dense(self.hidden, self.classes));
        layers
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(Error::Config(format!("mapping network sizes must be positive: {self:?}")));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "dropout keep probability must lie in (0, 1], got {}",
                self.keep_prob
            )));
        }
        Ok(())
    }
}

/// Classifier head: dense -> [batch-norm] -> ReLU -> [dropout] -> dense.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingNet {
    cfg: MappingConfig,
    params: ParamBlock,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MapTrace {
    mode: Mode,
    input: Array2<f64>,
    /// Normalised activations and inverse std (batch-norm only).
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    batch_mean: Option<Array1<f64>>,
    batch_var: Option<Array1<f64>>,
    pre_relu: Array2<f64>,
    /// Inverted-dropout mask with entries in `{0, 1/keep}`.
    mask: Option<Array2<f64>>,
    hidden_out: Array2<f64>,
}

impl MapTrace {
    pub fn mask(&self) -> Option<&Array2<f64>> {
        self.mask.as_ref()
    }
}

impl MappingNet {
    pub fn zeros(cfg: MappingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            params: ParamBlock::zeros(cfg.layers()),
            running_mean: vec![0.0; cfg.hidden],
            running_var: vec![1.0; cfg.hidden],
            cfg,
        })
    }

    pub fn init<R: Rng + ?Sized>(cfg: MappingConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(cfg)?;
        net.params.init_glorot(rng);
        if cfg.batch_norm {
            let (mut gamma, _) = net.params.layer_mut(1);
            gamma.fill(1.0);
        }
        Ok(net)
    }

    pub fn config(&self) -> &MappingConfig {
        &self.cfg
    }

    pub fn classes(&self) -> usize {
        self.cfg.classes
    }

    pub fn params(&self) -> &ParamBlock {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamBlock {
        &mut self.params
    }

    pub fn running_stats(&self) -> (&[f64], &[f64]) {
        (&self.running_mean, &self.running_var)
    }

    pub fn set_params(&mut self, params: ParamBlock) -> Result<()> {
        if !params.same_shape(&self.params) {
            return Err(Error::Dimension {
                context: "head parameters",
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn set_running_stats(&mut self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        check_dim("running mean", self.cfg.hidden, mean.len())?;
        check_dim("running variance", self.cfg.hidden, var.len())?;
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    fn output_layer(&self) -> usize {
        if self.cfg.batch_norm {
            2
        } else {
            1
        }
    }

    /// Forward pass. `rng` is only consulted for dropout in train mode, where
    /// one uniform draw per hidden activation is taken in row-major order.
    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Array2<f64>, MapTrace)> {
        check_dim("mapping input", self.cfg.input, x.ncols())?;
        if x.nrows() == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        let h = dense(x, self.params.weight(0), self.params.bias(0));
        let (pre_relu, xhat, inv_std, batch_mean, batch_var) = if self.cfg.batch_norm {
            let gamma = self.params.weight(1).row(0).to_owned();
            let beta = self.params.bias(1).to_owned();
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = h.mean_axis(Axis(0)).expect("non-empty batch");
                    let var = h.var_axis(Axis(0), 0.0);
                    (mean, var)
                }
                Mode::Eval => (
                    Array1::from(self.running_mean.clone()),
                    Array1::from(self.running_var.clone()),
                ),
            };
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let xhat = (&h - &mean) * &inv_std;
            let y = &xhat * &gamma + &beta;
            let stats = (mode == Mode::Train).then_some((mean, var));
            let (m, v) = stats.map_or((None, None), |(m, v)| (Some(m), Some(v)));
            (y, Some(xhat), Some(inv_std), m, v)
        } else {
            (h, None, None, None, None)
        };
        let mut a = pre_relu.mapv(|v| v.max(0.0));
        let mask = if mode == Mode::Train && self.cfg.dropout_active() {
            let rng = rng.ok_or_else(|| {
                Error::Config("dropout in train mode requires a random stream".into())
            })?;
            let keep = self.cfg.keep_prob;
            let mask = Array2::from_shape_fn(a.dim(), |_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            a *= &mask;
            Some(mask)
        } else {
            None
        };
        let out = self.output_layer();
        let logits = dense(a.view(), self.params.weight(out), self.params.bias(out));
        Ok((
            logits,
            MapTrace {
                mode,
                input: x.to_owned(),
                xhat,
                inv_std,
                batch_mean,
                batch_var,
                pre_relu,
                mask,
                hidden_out: a,
            },
        ))
    }

    /// Returns `(parameter gradient, input gradient)`.
    pub fn backward(
        &self,
        trace: &MapTrace,
        dlogits: ArrayView2<f64>,
    ) -> Result<(ParamBlock, Array2<f64>)> {
        check_dim("logit gradient width", self.cfg.classes, dlogits.ncols())?;
        check_dim("logit gradient rows", trace.input.nrows(), dlogits.nrows())?;
        let mut grads = self.params.zeros_like();
        let out = self.output_layer();
        let (dw2, db2, mut da) =
            dense_backward(trace.hidden_out.view(), self.params.weight(out), dlogits);
        {
            let (mut gw, mut gb) = grads.layer_mut(out);
            gw.assign(&dw2);
            gb.assign(&db2);
        }
        if let Some(mask) = &trace.mask {
            da *= mask;
        }
        Zip::from(&mut da).and(&trace.pre_relu).for_each(|d, &p| {
            if p <= 0.0 {
                *d = 0.0;
            }
        });
        let dh = if self.cfg.batch_norm {
            let xhat = trace.xhat.as_ref().expect("batch-norm trace");
            let inv_std = trace.inv_std.as_ref().expect("batch-norm trace");
            let gamma = self.params.weight(1).row(0).to_owned();
            let dgamma = (&da * xhat).sum_axis(Axis(0));
            let dbeta = da.sum_axis(Axis(0));
            {
                let (mut gg, mut gb) = grads.layer_mut(1);
                gg.row_mut(0).assign(&dgamma);
                gb.assign(&dbeta);
            }
            let dxhat = &da * &gamma;
            match trace.mode {
                Mode::Train => {
                    let b = dxhat.nrows() as f64;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                    let mut dh = &dxhat * b - &sum_dxhat - &(xhat * &sum_dxhat_xhat);
                    dh *= &(inv_std / b);
                    dh
                }
                Mode::Eval => dxhat * inv_std,
            }
        } else {
            da
        };
        let (dw1, db1, dx) = dense_backward(trace.input.view(), self.params.weight(0), dh.view());
        let (mut gw, mut gb) = grads.layer_mut(0);
        gw.assign(&dw1);
        gb.assign(&db1);
        Ok((grads, dx))
    }

    /// Folds the batch statistics of a train-mode trace into the running
    /// statistics. No-op without batch-norm or for eval traces.
    pub fn update_running_stats(&mut self, trace: &MapTrace) {
        if let (Some(mean), Some(var)) = (&trace.batch_mean, &trace.batch_var) {
            for (r, m) in self.running_mean.iter_mut().zip(mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, v) in self.running_var.iter_mut().zip(var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn cfg() -> MappingConfig {
        MappingConfig::plain(3, 4, 2)
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let net = MappingNet::zeros(cfg()).unwrap();
        let (out, _) = net.forward(array![[1.0, 2.0, 3.0]].view(), Mode::Train, None).unwrap();
        assert_eq!(out, array![[0.0, 0.0]]);
    }

    #[test]
    fn eval_is_deterministic() {
        let mut r = rng::seeded(1);
        let c = MappingConfig {
            batch_norm: true,
            keep_prob: 0.5,
            ..cfg()
        };
        let net = MappingNet::init(c, &mut r).unwrap();
        let x = array![[0.3, -1.0, 2.0], [1.0, 1.0, 1.0]];
        let (a, _) = net.forward(x.view(), Mode::Eval, None).unwrap();
        let (b, _) = net.forward(x.view(), Mode::Eval, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_without_rng_is_a_config_error() {
        let c = MappingConfig { keep_prob: 0.5, ..cfg() };
        let net = MappingNet::zeros(c).unwrap();
        let err = net.forward(array![[1.0, 2.0, 3.0]].view(), Mode::Train, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn running_stats_follow_the_momentum_rule() {
        let c = MappingConfig { batch_norm: true, ..cfg() };
        let mut net = MappingNet::init(c, &mut rng::seeded(2)).unwrap();
        let x = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let (_, trace) = net.forward(x.view(), Mode::Train, None).unwrap();
        let mean = trace.batch_mean.clone().unwrap();
        net.update_running_stats(&trace);
        let (rm, _) = net.running_stats();
        for (r, m) in rm.iter().zip(mean.iter()) {
            assert!((r - 0.1 * m).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_keep_probability() {
        let c = MappingConfig { keep_prob: 0.0, ..cfg() };
        assert!(MappingNet::zeros(c).is_err());
    }
}
