//! MLP discriminator with a (C+1)-way output: C sentiment classes plus one
//! "target domain" class.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::generator::uniform_matrix;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorDims {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// Number of sentiment classes C; the head emits C + 1 values.
    pub num_sentiments: usize,
    pub keep_prob: f64,
    /// Squash the head through tanh before the softmax, `softmax(tanh(W h + b))`.
    pub bounded_logits: bool,
}

impl DiscriminatorDims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("discriminator widths must be positive: {self:?}")));
        }
        if self.num_sentiments < 2 {
            return Err(Error::Config("need at least two sentiment classes".into()));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "keep probability {} outside (0, 1]",
                self.keep_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    pub dims: DiscriminatorDims,
    /// Hidden layers as (weight, bias).
    pub layers: Vec<(T, T)>,
    pub head_w: T,
    pub head_b: T,
}

pub type DiscriminatorParams = Discriminator<ParamId>;
pub type BoundDiscriminator = Discriminator<Var>;

impl Discriminator<ParamId> {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dims: DiscriminatorDims,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let mut layers = Vec::with_capacity(dims.hidden.len());
        let mut fan_in = dims.input_dim;
        for (i, &width) in dims.hidden.iter().enumerate() {
            let w = store.add(format!("disc.hidden{i}.w"), uniform_matrix(width, fan_in, rng));
            let b = store.add(format!("disc.hidden{i}.b"), Tensor::zeros(&[width]));
            layers.push((w, b));
            fan_in = width;
        }
        let out = dims.num_sentiments + 1;
        let head_w = store.add("disc.head.w", uniform_matrix(out, fan_in, rng));
        let head_b = store.add("disc.head.b", Tensor::zeros(&[out]));
        Ok(Discriminator {
            dims,
            layers,
            head_w,
            head_b,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect();
        ids.push(self.head_w);
        ids.push(self.head_b);
        ids
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore, track: bool) -> BoundDiscriminator {
        Discriminator {
            dims: self.dims.clone(),
            layers: self
                .layers
                .iter()
                .map(|(w, b)| (tape.param(store, *w, track), tape.param(store, *b, track)))
                .collect(),
            head_w: tape.param(store, self.head_w, track),
            head_b: tape.param(store, self.head_b, track),
        }
    }
}

/// Class distribution `p` over C sentiments plus the target-domain class.
pub fn discriminate<R: Rng + ?Sized>(
    tape: &mut Tape,
    disc: &BoundDiscriminator,
    d: &Var,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    if d.len() != disc.dims.input_dim {
        return Err(Error::shape("discriminate", d.shape(), &[disc.dims.input_dim]));
    }
    let mut h = d.clone();
    for (w, b) in &disc.layers {
        let a = tape.matmul(w, &h)?;
        let a = tape.add(&a, b)?;
        let a = tape.tanh(&a);
        h = tape.dropout(&a, disc.dims.keep_prob, training, rng)?;
    }
    let logits = tape.matmul(&disc.head_w, &h)?;
    let logits = tape.add(&logits, &disc.head_b)?;
    let logits = if disc.dims.bounded_logits {
        tape.tanh(&logits)
    } else {
        logits
    };
    tape.softmax(&logits)
}

fn check_distribution(p: &Var, num_sentiments: usize) -> Result<()> {
    if p.shape() != [num_sentiments + 1] {
        return Err(Error::shape("class distribution", p.shape(), &[num_sentiments + 1]));
    }
    let total: f64 = p.data().iter().sum();
    if p.data().iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Usage(format!(
            "not a probability vector: {:?}",
            p.data()
        )));
    }
    Ok(())
}

/// Sentiment entries of `p` renormalized to sum to one.
pub fn sentiment_dist(tape: &mut Tape, p: &Var, num_sentiments: usize) -> Result<Var> {
    check_distribution(p, num_sentiments)?;
    let sentiment = tape.slice(p, 0, num_sentiments)?;
    let mass = tape.sum(&sentiment);
    if !(mass.item() > f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "no probability mass on any sentiment class".into(),
        ));
    }
    tape.div_scalar(&sentiment, &mass)
}

/// `[Σ sentiment entries, p_target]`: probability of source versus target.
pub fn domain_dist(tape: &mut Tape, p: &Var, num_sentiments: usize) -> Result<Var> {
    check_distribution(p, num_sentiments)?;
    let sentiment = tape.slice(p, 0, num_sentiments)?;
    let mass = tape.sum(&sentiment);
    let source = as_vector(tape, &mass);
    let target = tape.slice(p, num_sentiments, 1)?;
    tape.concat(&[&source, &target])
}

/// One-element vector holding a scalar.
fn as_vector(tape: &mut Tape, s: &Var) -> Var {
    let one = Var::constant(Tensor::vector(vec![1.0]));
    tape.mul_scalar(&one, s).expect("scalar operand")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::generator::uniform_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(hidden: Vec<usize>) -> DiscriminatorDims {
        DiscriminatorDims {
            input_dim: 4,
            hidden,
            num_sentiments: 2,
            keep_prob: 0.75,
            bounded_logits: true,
        }
    }

    fn p(values: &[f64]) -> Var {
        Var::constant(Tensor::vector(values.to_vec()))
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let disc = DiscriminatorParams::init(&mut store, dims(vec![3, 2]), &mut rng).unwrap();
        for id in disc.ids() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::inference();
        let bound = disc.bind(&mut tape, &store, false);
        let d = p(&[0.5, -0.2, 0.1, 0.9]);
        let out = discriminate(&mut tape, &bound, &d, false, &mut rng).unwrap();
        for v in out.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_mode_is_deterministic_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let disc = DiscriminatorParams::init(&mut store, dims(vec![5, 3]), &mut rng).unwrap();
        let mut tape = Tape::inference();
        let bound = disc.bind(&mut tape, &store, false);
        let d = p(&[0.5, -0.2, 0.1, 0.9]);
        let a = discriminate(&mut tape, &bound, &d, false, &mut rng).unwrap();
        let b = discriminate(&mut tape, &bound, &d, false, &mut rng).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.len(), 3);
        assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let bad = p(&[0.5, 0.5]);
        assert!(matches!(
            discriminate(&mut tape, &bound, &bad, false, &mut rng),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn sentiment_renormalization() {
        let mut tape = Tape::new();
        let s = sentiment_dist(&mut tape, &p(&[0.3, 0.4, 0.3]), 2).unwrap();
        assert!((s.data()[0] - 3.0 / 7.0).abs() < 1e-15);
        assert!((s.data()[1] - 4.0 / 7.0).abs() < 1e-15);
        let s = sentiment_dist(&mut tape, &p(&[0.5, 0.5, 0.0]), 2).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = sentiment_dist(&mut tape, &p(&[0.9, 0.0, 0.1]), 2).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-15 && s.data()[1] == 0.0);
        assert!(matches!(
            sentiment_dist(&mut tape, &p(&[0.0, 0.0, 1.0]), 2),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            sentiment_dist(&mut tape, &p(&[0.5, 0.6, 0.0]), 2),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn domain_sum_rule() {
        let mut tape = Tape::new();
        let cases: [(&[f64], [f64; 2]); 3] = [
            (&[0.3, 0.4, 0.3], [0.7, 0.3]),
            (&[0.0, 0.0, 1.0], [0.0, 1.0]),
            (&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], [2.0 / 3.0, 1.0 / 3.0]),
        ];
        for (input, expected) in cases {
            let d = domain_dist(&mut tape, &p(input), 2).unwrap();
            assert!((d.data()[0] - expected[0]).abs() < 1e-15);
            assert!((d.data()[1] - expected[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn derived_distributions_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let z = store.add("z", uniform_vector(3, &mut rng));
        let w = [0.7, -1.3];
        let report = grad_check(
            &mut store,
            |tape, store| {
                let zv = tape.param(store, z, true);
                let p = tape.softmax(&zv)?;
                let s = sentiment_dist(tape, &p, 2)?;
                let d = domain_dist(tape, &p, 2)?;
                let ls = tape.log(&s)?;
                let ld = tape.log(&d)?;
                let wv = Var::constant(Tensor::vector(w.to_vec()));
                let a = tape.mul(&ls, &wv)?;
                let b = tape.mul(&ld, &wv)?;
                let both = tape.concat(&[&a, &b])?;
                Ok(tape.sum(&both))
            },
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
