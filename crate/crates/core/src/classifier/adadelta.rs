use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};

/// Adadelta state for one parameter tensor: decayed averages of squared
/// gradients and squared updates.
#[derive(Clone, Debug)]
pub struct Adadelta {
    rho: f64,
    epsilon: f64,
    learning_rate: f64,
    sq_grad: ArrayD<f64>,
    sq_update: ArrayD<f64>,
}

impl Adadelta {
    pub fn new(shape: &[usize], rho: f64, epsilon: f64, learning_rate: f64) -> Self {
        Self {
            rho,
            epsilon,
            learning_rate,
            sq_grad: ArrayD::zeros(shape),
            sq_update: ArrayD::zeros(shape),
        }
    }

    /// `dx = -(RMS[dx] / RMS[g]) g`, applied as `param += lr * dx`.
    pub fn step(&mut self, mut param: ArrayViewMutD<'_, f64>, grad: ArrayViewD<'_, f64>) {
        let (rho, eps, lr) = (self.rho, self.epsilon, self.learning_rate);
        Zip::from(&mut param)
            .and(&grad)
            .and(&mut self.sq_grad)
            .and(&mut self.sq_update)
            .for_each(|p, &g, eg, ex| {
                *eg = rho * *eg + (1.0 - rho) * g * g;
                let dx = -((*ex + eps).sqrt() / (*eg + eps).sqrt()) * g;
                *ex = rho * *ex + (1.0 - rho) * dx * dx;
                *p += lr * dx;
            });
    }

    /// Smallest accumulator entry; never negative.
    pub fn min_state(&self) -> f64 {
        self.sq_grad
            .iter()
            .chain(self.sq_update.iter())
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}
