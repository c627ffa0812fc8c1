use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Learning-rate schedule over the total number of optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// `lr * cos(7 pi k / (16 K))`, no warmup.
    Cosine,
}

impl Schedule {
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                base * (7.0 * std::f64::consts::PI * frac / 16.0).cos()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    pub momentum: f64,
    pub nesterov: bool,
}

/// Adam (L2-coupled weight decay) or SGD with optional momentum.
#[derive(Debug, Clone)]
pub struct Optimizer {
    settings: OptimizerSettings,
    t: i32,
    first: Vec<(Array2<f64>, Array1<f64>)>,
    second: Vec<(Array2<f64>, Array1<f64>)>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(settings: OptimizerSettings, model: &MlpModel) -> Self {
        let zeros = || Gradients::zeros_like(model).layers;
        Self {
            settings,
            t: 0,
            first: zeros(),
            second: if settings.kind == OptimizerKind::Adam {
                zeros()
            } else {
                Vec::new()
            },
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) {
        self.t += 1;
        let s = self.settings;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for (i, layer) in model.layers_mut().iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[i];
            match s.kind {
                OptimizerKind::Adam => {
                    let (mw, mb) = &mut self.first[i];
                    let (vw, vb) = &mut self.second[i];
                    let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
                        let g = g + s.weight_decay * *p;
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
                    };
                    Zip::from(&mut layer.weights).and(gw).and(mw).and(vw).for_each(update);
                    Zip::from(&mut layer.bias).and(gb).and(mb).and(vb).for_each(update);
                }
                OptimizerKind::Sgd => {
                    let (bw, bb) = &mut self.first[i];
                    let update = |p: &mut f64, &g: &f64, buf: &mut f64| {
                        let mut g = g + s.weight_decay * *p;
                        if s.momentum > 0.0 {
                            *buf = s.momentum * *buf + g;
                            g = if s.nesterov { g + s.momentum * *buf } else { *buf };
                        }
                        *p -= lr * g;
                    };
                    Zip::from(&mut layer.weights).and(gw).and(bw).for_each(update);
                    Zip::from(&mut layer.bias).and(gb).and(bb).for_each(update);
                }
            }
        }
    }
}
