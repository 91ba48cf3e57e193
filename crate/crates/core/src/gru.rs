//! Gated recurrent unit cell on the tape.

use rand::Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Parameter handles for one GRU cell.
///
/// Gate equations, with `x` the input and `h` the previous state:
/// ```text
/// r  = sigmoid(W_r x + U_r h + b_r)        (reset)
/// u  = sigmoid(W_u x + U_u h + b_u)        (update)
/// n  = tanh   (W_n x + U_n (r .* h) + b_n) (candidate)
/// h' = (1 - u) .* h + u .* n
/// ```
/// All-zero parameters and zero state give `h' = 0`, which several tests
/// rely on.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_u: ParamId,
    u_u: ParamId,
    b_u: ParamId,
    w_n: ParamId,
    u_n: ParamId,
    b_n: ParamId,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w_r = store.add_weight(&format!("{prefix}.w_r"), hidden_dim, input_dim, rng);
        let u_r = store.add_weight(&format!("{prefix}.u_r"), hidden_dim, hidden_dim, rng);
        let w_u = store.add_weight(&format!("{prefix}.w_u"), hidden_dim, input_dim, rng);
        let u_u = store.add_weight(&format!("{prefix}.u_u"), hidden_dim, hidden_dim, rng);
        let w_n = store.add_weight(&format!("{prefix}.w_n"), hidden_dim, input_dim, rng);
        let u_n = store.add_weight(&format!("{prefix}.u_n"), hidden_dim, hidden_dim, rng);
        let b_r = store.add_zeros(&format!("{prefix}.b_r"), &[hidden_dim]);
        let b_u = store.add_zeros(&format!("{prefix}.b_u"), &[hidden_dim]);
        let b_n = store.add_zeros(&format!("{prefix}.b_n"), &[hidden_dim]);
        GruCell { input_dim, hidden_dim, w_r, u_r, b_r, w_u, u_u, b_u, w_n, u_n, b_n }
    }

    /// Register this cell's parameters on a tape, trainable or frozen.
    pub fn vars(&self, tape: &mut Tape, store: &ParamStore, frozen: bool) -> GruVars {
        let mut reg = |id: ParamId| {
            if frozen {
                tape.param_frozen(store, id)
            } else {
                tape.param(store, id)
            }
        };
        GruVars {
            w_r: reg(self.w_r),
            u_r: reg(self.u_r),
            b_r: reg(self.b_r),
            w_u: reg(self.w_u),
            u_u: reg(self.u_u),
            b_u: reg(self.b_u),
            w_n: reg(self.w_n),
            u_n: reg(self.u_n),
            b_n: reg(self.b_n),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.w_r, self.u_r, self.b_r, self.w_u, self.u_u, self.b_u, self.w_n, self.u_n,
            self.b_n,
        ]
    }
}

/// Tape-registered parameters of one cell, valid for a single tape.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    w_r: Var,
    u_r: Var,
    b_r: Var,
    w_u: Var,
    u_u: Var,
    b_u: Var,
    w_n: Var,
    u_n: Var,
    b_n: Var,
}

impl GruVars {
    /// One recurrence step: consume input `x` with previous state `h`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let rx = tape.matvec(self.w_r, x)?;
        let rh = tape.matvec(self.u_r, h)?;
        let r_pre = tape.add(rx, rh)?;
        let r_pre = tape.add(r_pre, self.b_r)?;
        let r = tape.sigmoid(r_pre);

        let ux = tape.matvec(self.w_u, x)?;
        let uh = tape.matvec(self.u_u, h)?;
        let u_pre = tape.add(ux, uh)?;
        let u_pre = tape.add(u_pre, self.b_u)?;
        let u = tape.sigmoid(u_pre);

        let gated = tape.mul(r, h)?;
        let nx = tape.matvec(self.w_n, x)?;
        let nh = tape.matvec(self.u_n, gated)?;
        let n_pre = tape.add(nx, nh)?;
        let n_pre = tape.add(n_pre, self.b_n)?;
        let n = tape.tanh(n_pre);

        // h' = h + u .* (n - h)
        let delta = tape.sub(n, h)?;
        let scaled = tape.mul(u, delta)?;
        tape.add(h, scaled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Real, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_fix_zero_state() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = GruCell::new(&mut store, "g", 3, 4, &mut rng);
        for id in cell.param_ids() {
            store.value_mut(id).fill(0.0);
        }
        let mut tape = Tape::new();
        let vars = cell.vars(&mut tape, &store, true);
        let x = tape.constant(Tensor::vector(vec![0.7, -0.3, 2.0]));
        let h = tape.constant(Tensor::zeros(&[4]));
        let h1 = vars.step(&mut tape, x, h).unwrap();
        assert_eq!(tape.value(h1).data(), &[0.0; 4]);
    }

    /// Scalar GRU with hand-set weights against the gate algebra computed
    /// with plain arithmetic.
    #[test]
    fn one_step_matches_scalar_gate_algebra() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = GruCell::new(&mut store, "g", 1, 1, &mut rng);
        let settings: [(ParamId, Real); 9] = [
            (cell.w_r, 0.5),
            (cell.u_r, -0.3),
            (cell.w_u, 0.7),
            (cell.u_u, 0.2),
            (cell.w_n, 1.1),
            (cell.u_n, -0.6),
            (cell.b_r, 0.1),
            (cell.b_u, -0.2),
            (cell.b_n, 0.3),
        ];
        for (id, v) in settings {
            store.value_mut(id).fill(v);
        }

        let x: Real = 0.8;
        let h: Real = -0.4;
        let sig = |v: Real| 1.0 / (1.0 + (-v).exp());
        let r = sig(0.5 * x + (-0.3) * h + 0.1);
        let u = sig(0.7 * x + 0.2 * h + (-0.2));
        let n = (1.1 * x + (-0.6) * (r * h) + 0.3).tanh();
        let expected = (1.0 - u) * h + u * n;

        let mut tape = Tape::new();
        let vars = cell.vars(&mut tape, &store, true);
        let xv = tape.constant(Tensor::vector(vec![x]));
        let hv = tape.constant(Tensor::vector(vec![h]));
        let h1 = vars.step(&mut tape, xv, hv).unwrap();
        assert!((tape.value(h1).data()[0] - expected).abs() < 1e-12);
    }
}
