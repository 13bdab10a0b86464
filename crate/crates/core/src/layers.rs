//! Parameterized building blocks shared by the experts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numcore::{Array, NumError, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl LinearParams {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, NumError> {
        let w = store.add_weight(format!("{name}.w"), d_in, d_out, rng)?;
        let b = if bias {
            Some(store.add_zeros(format!("{name}.b"), &[d_out])?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NumError> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn register(store: &mut ParamStore, name: &str, width: usize) -> Result<Self, NumError> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Array::full(&[width], 1.0))?,
            bias: store.add_zeros(format!("{name}.bias"), &[width])?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NumError> {
        let normed = tape.layer_norm(x, self.eps);
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        let scaled = tape.mul_row(normed, g)?;
        tape.add_row(scaled, b)
    }
}

/// Two-layer position-wise feed-forward block with a ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: LinearParams,
    pub down: LinearParams,
}

impl FeedForward {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NumError> {
        Ok(Self {
            up: LinearParams::register(store, &format!("{name}.up"), width, hidden, true, rng)?,
            down: LinearParams::register(store, &format!("{name}.down"), hidden, width, true, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NumError> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.down.forward(tape, store, h)
    }
}

/// Inverted dropout on attention weights during training.
#[derive(Debug)]
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var, NumError> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = tape.shape(x).to_vec();
        let mask = Array::from_fn(&shape, |_| {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}
