//! Conditional projection discriminator over decoder hidden-state sequences.
//!
//! A sequence is summarized by a bi-directional GRU (final forward and final
//! backward states, concatenated); the score is
//! `sigmoid(l_v' W phi(s) + v' phi(s))`, affine in the attribute vector for
//! a fixed summary. One discriminator covers all attributes jointly.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gru::{GruCell, GruVars};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::text::{AttributeSchema, AttributeVector};

pub struct Discriminator {
    /// Per-direction GRU size; the sequence summary has width `2 * d_disc`.
    pub d_disc: usize,
    /// Dimensionality of the hidden states being judged.
    pub input_dim: usize,
    pub attr_width: usize,
    pub store: ParamStore,
    // One cell applied in both directions: reversing the input sequence
    // exactly swaps the forward/backward halves of the summary.
    cell: GruCell,
    w: ParamId,
    v: ParamId,
}

impl Discriminator {
    pub fn new<R: Rng>(d_disc: usize, input_dim: usize, attr_width: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "disc.gru", input_dim, d_disc, rng);
        let w = store.add_weight("disc.w", attr_width, 2 * d_disc, rng);
        let v = store.add_uniform("disc.v", &[2 * d_disc], 1.0 / ((2 * d_disc) as Real).sqrt(), rng);
        Discriminator { d_disc, input_dim, attr_width, store, cell, w, v }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    pub fn vars(&self, tape: &mut Tape, frozen: bool) -> DiscVars {
        let (w, v) = if frozen {
            (tape.param_frozen(&self.store, self.w), tape.param_frozen(&self.store, self.v))
        } else {
            (tape.param(&self.store, self.w), tape.param(&self.store, self.v))
        };
        DiscVars {
            cell: self.cell.vars(tape, &self.store, frozen),
            w,
            v,
            d_disc: self.d_disc,
            attr_width: self.attr_width,
        }
    }
}

pub struct DiscVars {
    cell: GruVars,
    w: Var,
    v: Var,
    d_disc: usize,
    attr_width: usize,
}

impl DiscVars {
    /// Sequence summary: concatenation of the final forward and final
    /// backward GRU states over the hidden-state sequence.
    pub fn encode_states(&self, tape: &mut Tape, states: &[Var]) -> Result<Var> {
        if states.is_empty() {
            return Err(Error::Contract("cannot summarize an empty state sequence".into()));
        }
        let mut fwd = tape.constant(Tensor::zeros(&[self.d_disc]));
        for &s in states {
            fwd = self.cell.step(tape, s, fwd)?;
        }
        let mut bwd = tape.constant(Tensor::zeros(&[self.d_disc]));
        for &s in states.iter().rev() {
            bwd = self.cell.step(tape, s, bwd)?;
        }
        tape.concat(fwd, bwd)
    }

    /// Projection logit `l_v' W phi + v' phi` for a precomputed summary.
    pub fn logit(&self, tape: &mut Tape, summary: Var, label_encoding: &[Real]) -> Result<Var> {
        if label_encoding.len() != self.attr_width {
            return Err(Error::Shape(format!(
                "attribute vector width {} does not match projection rows {}",
                label_encoding.len(),
                self.attr_width
            )));
        }
        let lv = tape.constant(Tensor::vector(label_encoding.to_vec()));
        let w_phi = tape.matvec(self.w, summary)?;
        let cond = tape.mul(lv, w_phi)?;
        let cond = tape.sum(cond);
        let uncond = tape.mul(self.v, summary)?;
        let uncond = tape.sum(uncond);
        tape.add(cond, uncond)
    }

    /// `sigmoid(logit)` for a precomputed summary; output strictly in (0,1).
    pub fn score_summary(&self, tape: &mut Tape, summary: Var, label_encoding: &[Real]) -> Result<Var> {
        let l = self.logit(tape, summary, label_encoding)?;
        Ok(tape.sigmoid(l))
    }

    /// Score a hidden-state sequence against a raw attribute encoding.
    pub fn score_states(
        &self,
        tape: &mut Tape,
        states: &[Var],
        label_encoding: &[Real],
    ) -> Result<Var> {
        let summary = self.encode_states(tape, states)?;
        self.score_summary(tape, summary, label_encoding)
    }

    /// Score a hidden-state sequence against an attribute vector.
    pub fn score(
        &self,
        tape: &mut Tape,
        states: &[Var],
        label: &AttributeVector,
        schema: &AttributeSchema,
    ) -> Result<Var> {
        self.score_states(tape, states, &label.encoding(schema))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn consts(tape: &mut Tape, rows: &[Vec<Real>]) -> Vec<Var> {
        rows.iter().map(|r| tape.constant(Tensor::vector(r.clone()))).collect()
    }

    #[test]
    fn zero_parameters_give_zero_summary_and_half_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut disc = Discriminator::new(3, 2, 2, &mut rng);
        for id in disc.param_ids() {
            disc.store.value_mut(id).fill(0.0);
        }
        let mut tape = Tape::new();
        let dv = disc.vars(&mut tape, true);
        let states = consts(&mut tape, &[vec![0.4, -0.2], vec![1.0, 0.3]]);
        let summary = dv.encode_states(&mut tape, &states).unwrap();
        assert_eq!(tape.value(summary).data(), &[0.0; 6]);
        let score = dv.score_summary(&mut tape, summary, &[1.0, 0.0]).unwrap();
        assert_eq!(tape.value(score).item(), 0.5);
    }

    #[test]
    fn reversing_input_swaps_forward_and_backward_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let disc = Discriminator::new(3, 2, 2, &mut rng);
        let rows = vec![vec![0.4, -0.2], vec![1.0, 0.3], vec![-0.6, 0.8]];
        let mut rev = rows.clone();
        rev.reverse();

        let mut tape = Tape::new();
        let dv = disc.vars(&mut tape, true);
        let s1 = consts(&mut tape, &rows);
        let s2 = consts(&mut tape, &rev);
        let a = dv.encode_states(&mut tape, &s1).unwrap();
        let b = dv.encode_states(&mut tape, &s2).unwrap();
        let (a, b) = (tape.value(a).data().to_vec(), tape.value(b).data().to_vec());
        assert_ne!(&a[..3], &b[..3]);
        assert_eq!(&a[..3], &b[3..]);
        assert_eq!(&a[3..], &b[..3]);
    }

    #[test]
    fn length_one_sequence_reads_same_element_both_ways() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let disc = Discriminator::new(4, 3, 2, &mut rng);
        let mut tape = Tape::new();
        let dv = disc.vars(&mut tape, true);
        let s = consts(&mut tape, &[vec![0.3, -0.9, 0.5]]);
        let summary = dv.encode_states(&mut tape, &s).unwrap();
        let d = tape.value(summary).data();
        assert_eq!(&d[..4], &d[4..]);
        let empty: Vec<Var> = Vec::new();
        assert!(dv.encode_states(&mut tape, &empty).is_err());
    }

    #[test]
    fn score_matches_hand_computed_projection() {
        // l_v = [1,0], W = [[1,0],[0,0]], v = [0,1], phi = [2,3]
        // -> logit = 1*2 + 0 + 0*2 + 1*3 = 5.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut disc = Discriminator::new(1, 1, 2, &mut rng);
        disc.store
            .set_value(disc.w, Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        disc.store.set_value(disc.v, Tensor::vector(vec![0.0, 1.0])).unwrap();
        let mut tape = Tape::new();
        let dv = disc.vars(&mut tape, true);
        let phi = tape.constant(Tensor::vector(vec![2.0, 3.0]));
        let score = dv.score_summary(&mut tape, phi, &[1.0, 0.0]).unwrap();
        assert!((tape.value(score).item() - sigmoid(5.0)).abs() < 1e-9);
        assert!((tape.value(score).item() - 0.993307149) < 1e-6);

        assert!(dv.score_summary(&mut tape, phi, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn logit_is_affine_in_the_attribute_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let disc = Discriminator::new(3, 2, 4, &mut rng);
        let mut tape = Tape::new();
        let dv = disc.vars(&mut tape, true);
        let states = consts(&mut tape, &[vec![0.4, -0.2], vec![0.1, 0.9]]);
        let summary = dv.encode_states(&mut tape, &states).unwrap();

        let la = [1.0, 0.0, 0.0, 1.0];
        let lb = [0.0, 1.0, 1.0, 0.0];
        let ga = dv.logit(&mut tape, summary, &la).unwrap();
        let gb = dv.logit(&mut tape, summary, &lb).unwrap();
        let diff = tape.value(ga).item() - tape.value(gb).item();

        // (la - lb)' W phi, computed directly from the parameter values.
        let w = disc.store.value(disc.w);
        let phi = tape.value(summary).data();
        let mut expected = 0.0;
        for r in 0..4 {
            let wphi: Real = w.row(r).iter().zip(phi).map(|(a, b)| a * b).sum();
            expected += (la[r] - lb[r]) * wphi;
        }
        assert!((diff - expected).abs() < 1e-12);
    }
}
