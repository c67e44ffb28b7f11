//! Sentiment, domain, domain-confusion and entropy losses, and the two
//! weighted objectives built from them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Probabilities are clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]` before `ln`.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_g1: f64,
    pub lambda_g2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 1.0,
            lambda_g1: 0.2,
            lambda_g2: 0.02,
        }
    }
}

impl LossWeights {
    /// All adversarial terms off: a plain supervised hierarchical attention
    /// classifier.
    pub fn naive() -> Self {
        LossWeights {
            lambda_d: 0.0,
            lambda_g1: 0.0,
            lambda_g2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_g1", self.lambda_g1),
            ("lambda_g2", self.lambda_g2),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which side of the adaptation a document comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Index into a `[source, target]` domain distribution.
    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    /// Binary domain label: 1 for source, 0 for target.
    pub fn label(self) -> u8 {
        match self {
            Domain::Source => 1,
            Domain::Target => 0,
        }
    }
}

fn ensure_nonempty<T>(batch: &[T], what: &str) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Usage(format!("{what} over an empty batch")));
    }
    Ok(())
}

/// `-ln p[k]` with `p` clamped away from 0 and 1.
fn neg_log_prob(tape: &mut Tape, p: &Var, k: usize) -> Result<Var> {
    if k >= p.len() {
        return Err(Error::Usage(format!(
            "class index {k} out of range for a {}-way distribution",
            p.len()
        )));
    }
    let pk = tape.slice(p, k, 1)?;
    let pk = tape.clamp(&pk, PROB_FLOOR, 1.0 - PROB_FLOOR);
    let l = tape.log(&pk)?;
    let s = tape.sum(&l);
    Ok(tape.scale(&s, -1.0))
}

fn mean(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let refs: Vec<&Var> = terms.iter().collect();
    let all = tape.concat(&refs)?;
    let total = tape.sum(&all);
    Ok(tape.scale(&total, 1.0 / terms.len() as f64))
}

fn scalars_as_vectors(tape: &mut Tape, terms: Vec<Var>) -> Result<Vec<Var>> {
    let one = Var::constant(crate::Tensor::vector(vec![1.0]));
    terms.iter().map(|t| tape.mul_scalar(&one, t)).collect()
}

/// Mean cross-entropy of sentiment predictions against gold class indices.
/// For binary sentiment index 0 is positive and 1 negative.
pub fn sentiment_loss(tape: &mut Tape, batch: &[(Var, usize)]) -> Result<Var> {
    ensure_nonempty(batch, "sentiment loss")?;
    let terms = batch
        .iter()
        .map(|(p, k)| neg_log_prob(tape, p, *k))
        .collect::<Result<Vec<_>>>()?;
    let terms = scalars_as_vectors(tape, terms)?;
    mean(tape, &terms)
}

/// Mean binary cross-entropy of `[p_source, p_target]` against true domains.
pub fn domain_loss(tape: &mut Tape, batch: &[(Var, Domain)]) -> Result<Var> {
    ensure_nonempty(batch, "domain loss")?;
    let terms = batch
        .iter()
        .map(|(p, dom)| {
            if p.len() != 2 {
                return Err(Error::shape("domain_loss", p.shape(), &[2]));
            }
            neg_log_prob(tape, p, dom.index())
        })
        .collect::<Result<Vec<_>>>()?;
    let terms = scalars_as_vectors(tape, terms)?;
    mean(tape, &terms)
}

/// Domain loss on target documents whose labels are all masked as source.
pub fn domain_confusion_loss(tape: &mut Tape, batch: &[(Var, Domain)]) -> Result<Var> {
    ensure_nonempty(batch, "domain confusion loss")?;
    if batch.iter().any(|(_, d)| *d == Domain::Source) {
        return Err(Error::Usage(
            "domain confusion loss takes target-domain documents only".into(),
        ));
    }
    let masked: Vec<(Var, Domain)> = batch
        .iter()
        .map(|(p, _)| (p.clone(), Domain::Source))
        .collect();
    domain_loss(tape, &masked)
}

/// Mean Shannon entropy of sentiment predictions, with `0 ln 0 = 0`.
pub fn entropy_loss(tape: &mut Tape, batch: &[Var]) -> Result<Var> {
    ensure_nonempty(batch, "entropy loss")?;
    let terms = batch
        .iter()
        .map(|p| {
            if p.len() < 2 {
                return Err(Error::shape("entropy_loss", p.shape(), &[2]));
            }
            let safe = tape.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR);
            let logs = tape.log(&safe)?;
            let plogp = tape.mul(p, &logs)?;
            let s = tape.sum(&plogp);
            Ok(tape.scale(&s, -1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let terms = scalars_as_vectors(tape, terms)?;
    mean(tape, &terms)
}

/// `L_sen + λ_D · L_dom`.
pub fn discriminator_loss(
    tape: &mut Tape,
    sentiment: &Var,
    domain: &Var,
    weights: &LossWeights,
) -> Result<Var> {
    let d = tape.scale(domain, weights.lambda_d);
    tape.add(sentiment, &d)
}

/// `L_sen + λ_G¹ · L_dom^c + λ_G² · L_ent`.
pub fn generator_loss(
    tape: &mut Tape,
    sentiment: &Var,
    confusion: &Var,
    entropy: &Var,
    weights: &LossWeights,
) -> Result<Var> {
    let c = tape.scale(confusion, weights.lambda_g1);
    let e = tape.scale(entropy, weights.lambda_g2);
    let partial = tape.add(sentiment, &c)?;
    tape.add(&partial, &e)
}
