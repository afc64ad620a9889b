//! Fully connected network with ReLU hidden layers and a linear head,
//! trained on a Huber loss over the Q-value of the taken action.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// One training example: the observed state, the action taken and the
/// regression target for that action's Q-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

pub fn huber(e: f64) -> f64 {
    if e.abs() <= HUBER_DELTA {
        0.5 * e * e
    } else {
        HUBER_DELTA * (e.abs() - 0.5 * HUBER_DELTA)
    }
}

fn huber_grad(e: f64) -> f64 {
    e.clamp(-HUBER_DELTA, HUBER_DELTA)
}

impl Mlp {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let k = 1.0 / (fan_in as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-k..=k)),
                    b: DVector::from_fn(fan_out, |_, _| rng.random_range(-k..=k)),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                w: DMatrix::zeros(w[1], w[0]),
                b: DVector::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        for pair in layers.windows(2) {
            if pair[1].w.ncols() != pair[0].w.nrows() {
                return Err(Error::Dimension {
                    expected: pair[0].w.nrows(),
                    got: pair[1].w.ncols(),
                });
            }
        }
        for l in &layers {
            if l.b.len() != l.w.nrows() {
                return Err(Error::Dimension {
                    expected: l.w.nrows(),
                    got: l.b.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.ncols()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").w.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameter slices in storage order: per layer, the weight matrix
    /// (column-major) then the bias.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: state.len(),
            });
        }
        let x = DMatrix::from_column_slice(state.len(), 1, state);
        Ok(self.forward_matrix(x).as_slice().to_vec())
    }

    /// Q-values for a batch; column `j` of `x` is sample `j`.
    pub fn forward_matrix(&self, x: DMatrix<f64>) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        let mut a = x;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &a;
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Stacks states as columns.
    pub fn batch_matrix(&self, states: &[&[f64]]) -> Result<DMatrix<f64>> {
        let d = self.input_dim();
        if let Some(bad) = states.iter().find(|s| s.len() != d) {
            return Err(Error::Dimension { expected: d, got: bad.len() });
        }
        let mut x = DMatrix::zeros(d, states.len());
        for (j, s) in states.iter().enumerate() {
            x.column_mut(j).copy_from_slice(s);
        }
        Ok(x)
    }

    /// Mean Huber loss of `Q(state)[action]` against `target`.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64> {
        let (loss, _) = self.loss_impl(batch, false)?;
        Ok(loss)
    }

    /// Mean loss and its exact gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[Sample]) -> Result<(f64, Mlp)> {
        let (loss, grad) = self.loss_impl(batch, true)?;
        Ok((loss, grad.expect("requested")))
    }

    fn loss_impl(&self, batch: &[Sample], want_grad: bool) -> Result<(f64, Option<Mlp>)> {
        if batch.is_empty() {
            return Err(Error::Empty("minibatch"));
        }
        let out = self.output_dim();
        if let Some(bad) = batch.iter().find(|s| s.action >= out) {
            return Err(Error::Dimension {
                expected: out,
                got: bad.action + 1,
            });
        }
        let states: Vec<&[f64]> = batch.iter().map(|s| s.state.as_slice()).collect();
        let x = self.batch_matrix(&states)?;
        let n = batch.len() as f64;

        // Forward with cached activations.
        let last = self.layers.len() - 1;
        let mut acts = vec![x];
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * acts.last().expect("non-empty");
            for mut col in z.column_iter_mut() {
                col += &l.b;
            }
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        let q = acts.last().expect("non-empty");
        let mut loss = 0.0;
        let mut delta = DMatrix::zeros(out, batch.len());
        for (j, s) in batch.iter().enumerate() {
            let e = q[(s.action, j)] - s.target;
            loss += huber(e);
            delta[(s.action, j)] = huber_grad(e) / n;
        }
        loss /= n;
        if !want_grad {
            return Ok((loss, None));
        }

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let a_prev = &acts[i];
            let gw = &delta * a_prev.transpose();
            let gb = delta.column_sum();
            grads.push(Layer { w: gw, b: gb });
            if i > 0 {
                let mut d = self.layers[i].w.transpose() * &delta;
                // ReLU derivative from the stored post-activation.
                d.zip_apply(a_prev, |g, a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = d;
            }
        }
        grads.reverse();
        Ok((loss, Some(Mlp { layers: grads })))
    }
}

/// Sign pattern of every hidden pre-activation and every Huber residual
/// relative to its kink. Finite differences are only meaningful between
/// two parameter settings with the same pattern.
pub fn kink_pattern(net: &Mlp, batch: &[Sample]) -> Vec<i8> {
    let mut pattern = Vec::new();
    for s in batch {
        let mut a = DVector::from_column_slice(&s.state);
        let last = net.layers.len() - 1;
        for (i, l) in net.layers.iter().enumerate() {
            let mut z = &l.w * &a + &l.b;
            if i < last {
                pattern.extend(z.iter().map(|&v| (v > 0.0) as i8));
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        let e = a[s.action] - s.target;
        pattern.push(if e > HUBER_DELTA { 1 } else if e < -HUBER_DELTA { -1 } else { 0 });
    }
    pattern
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[27, 64, 64, 5]);
        let q = net.forward(&[1.0; 27]).unwrap();
        assert_eq!(q, vec![0.0; 5]);
        assert!(net.forward(&[1.0; 26]).is_err());
    }

    #[test]
    fn output_length_is_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[27, 64, 64, 5], &mut rng);
        assert_eq!(net.forward(&[0.3; 27]).unwrap().len(), 5);
        assert_eq!(net.num_params(), 27 * 64 + 64 + 64 * 64 + 64 + 64 * 5 + 5);
    }

    #[test]
    fn hand_computed_two_two_two() {
        // Layer 1: identity, bias (0, -1) -> relu(x0), relu(x1 - 1)
        // Layer 2: [[1, 1], [0, 2]], bias 0 -> relu
        // Layer 3: [[1, -1], [2, 0]], bias (0.5, 0)
        let net = Mlp::from_layers(vec![
            Layer {
                w: dmatrix![1.0, 0.0; 0.0, 1.0],
                b: DVector::from_vec(vec![0.0, -1.0]),
            },
            Layer {
                w: dmatrix![1.0, 1.0; 0.0, 2.0],
                b: DVector::zeros(2),
            },
            Layer {
                w: dmatrix![1.0, -1.0; 2.0, 0.0],
                b: DVector::from_vec(vec![0.5, 0.0]),
            },
        ])
        .unwrap();
        // x = (2, 3): h1 = (2, 2); h2 = (4, 4); out = (0.5, 8)
        assert_eq!(net.forward(&[2.0, 3.0]).unwrap(), vec![0.5, 8.0]);
        // x = (-1, 0.5): h1 = (0, 0); h2 = (0, 0); out = (0.5, 0)
        assert_eq!(net.forward(&[-1.0, 0.5]).unwrap(), vec![0.5, 0.0]);
    }

    #[test]
    fn mismatched_layers_rejected() {
        let bad = Mlp::from_layers(vec![
            Layer {
                w: DMatrix::zeros(3, 2),
                b: DVector::zeros(3),
            },
            Layer {
                w: DMatrix::zeros(1, 2),
                b: DVector::zeros(1),
            },
        ]);
        assert!(bad.is_err());
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[4, 8, 8, 3], &mut rng);
        let state = vec![0.1, -0.2, 0.3, 0.4];
        let q = net.forward(&state).unwrap();
        let batch = vec![Sample {
            state,
            action: 2,
            target: q[2],
        }];
        let (loss, g) = net.loss_and_gradient(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.to_flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_sample_batch_is_per_sample_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[4, 8, 8, 3], &mut rng);
        let a = Sample {
            state: vec![0.5, 0.1, -0.3, 0.9],
            action: 1,
            target: 0.7,
        };
        let b = Sample {
            state: vec![-0.5, 0.4, 0.2, 0.0],
            action: 0,
            target: -2.0,
        };
        let (_, ga) = net.loss_and_gradient(std::slice::from_ref(&a)).unwrap();
        let (_, gb) = net.loss_and_gradient(std::slice::from_ref(&b)).unwrap();
        let (_, gab) = net.loss_and_gradient(&[a, b]).unwrap();
        for ((x, y), z) in ga.to_flat().iter().zip(gb.to_flat()).zip(gab.to_flat()) {
            assert_relative_eq!(0.5 * (x + y), z, epsilon = 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let net = Mlp::new(&[6, 16, 16, 4], &mut rng);
            let batch: Vec<Sample> = (0..5)
                .map(|_| Sample {
                    state: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    action: rng.random_range(0..4),
                    target: rng.random_range(-3.0..3.0),
                })
                .collect();
            let (_, g) = net.loss_and_gradient(&batch).unwrap();
            let g = g.to_flat();
            let base = net.to_flat();
            let pattern = kink_pattern(&net, &batch);
            let h = 1e-5;
            for i in 0..base.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let mut p = base.clone();
                p[i] += h;
                plus.set_flat(&p).unwrap();
                p[i] -= 2.0 * h;
                minus.set_flat(&p).unwrap();
                if kink_pattern(&plus, &batch) != pattern || kink_pattern(&minus, &batch) != pattern {
                    continue;
                }
                let fd = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                assert!(rel < 1e-4, "param {i}: analytic {} vs numeric {fd}", g[i]);
            }
        }
    }

    #[test]
    fn flat_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Mlp::new(&[3, 5, 2], &mut rng);
        let mut b = Mlp::zeros(&[3, 5, 2]);
        b.set_flat(&a.to_flat()).unwrap();
        assert_eq!(a, b);
        assert!(b.set_flat(&[0.0; 3]).is_err());
    }

    #[test]
    fn huber_values() {
        assert_eq!(huber(0.5), 0.125);
        assert_eq!(huber(-3.0), 2.5);
        assert_eq!(huber_grad(-3.0), -1.0);
    }
}
