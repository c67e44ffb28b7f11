//! Generator plus discriminator sharing one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::corpus::{Document, LabeledDocument, Sentiment};
use crate::discriminator::{
    discriminate, domain_dist, sentiment_dist, BoundDiscriminator, DiscriminatorDims,
    DiscriminatorParams,
};
use crate::error::{Error, Result};
use crate::generator::{encode_document, AttentionRecord, BoundGenerator, GeneratorDims, GeneratorParams};

/// Architecture of a model: everything needed to rebuild its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub generator: GeneratorDims,
    pub discriminator: DiscriminatorDims,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.discriminator.input_dim != self.generator.repr_dim() {
            return Err(Error::Config(format!(
                "discriminator input {} does not match representation length {}",
                self.discriminator.input_dim,
                self.generator.repr_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Hagan {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
}

/// Everything the model says about one document in eval mode.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub repr: Vec<f64>,
    pub p: Vec<f64>,
    pub p_sen: Vec<f64>,
    pub p_dom: Vec<f64>,
    pub attention: AttentionRecord,
}

impl Prediction {
    /// Predicted sentiment class; ties go to the lower index.
    pub fn class(&self) -> usize {
        argmax(&self.p_sen)
    }
}

/// Index of the largest value, first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Parameters bound to one tape.
pub struct Bound {
    pub generator: BoundGenerator,
    pub discriminator: BoundDiscriminator,
}

impl Hagan {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let generator = GeneratorParams::init(&mut store, spec.generator, &mut rng)?;
        let discriminator = DiscriminatorParams::init(&mut store, spec.discriminator.clone(), &mut rng)?;
        Ok(Hagan {
            spec,
            store,
            generator,
            discriminator,
        })
    }

    pub fn num_sentiments(&self) -> usize {
        self.spec.discriminator.num_sentiments
    }

    pub fn generator_ids(&self) -> Vec<ParamId> {
        self.generator.ids()
    }

    pub fn discriminator_ids(&self) -> Vec<ParamId> {
        self.discriminator.ids()
    }

    pub fn bind(&self, tape: &mut Tape, track_generator: bool, track_discriminator: bool) -> Bound {
        Bound {
            generator: self.generator.bind(tape, &self.store, track_generator),
            discriminator: self.discriminator.bind(tape, &self.store, track_discriminator),
        }
    }

    /// Eval-mode forward pass over documents, one shared inference tape.
    pub fn predict_all<'a>(
        &self,
        docs: impl IntoIterator<Item = &'a Document>,
    ) -> Result<Vec<Prediction>> {
        let mut tape = Tape::inference();
        let bound = self.bind(&mut tape, false, false);
        // Dropout is off in eval mode, so this rng is never drawn from.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = self.num_sentiments();
        docs.into_iter()
            .map(|doc| {
                let enc = encode_document(&mut tape, &bound.generator, &doc.sentences)
                    .map_err(|e| e.in_document(&doc.id))?;
                let p = discriminate(&mut tape, &bound.discriminator, &enc.repr, false, &mut rng)?;
                let p_sen = sentiment_dist(&mut tape, &p, c)?;
                let p_dom = domain_dist(&mut tape, &p, c)?;
                Ok(Prediction {
                    repr: enc.repr.data().to_vec(),
                    p: p.data().to_vec(),
                    p_sen: p_sen.data().to_vec(),
                    p_dom: p_dom.data().to_vec(),
                    attention: enc.attention,
                })
            })
            .collect()
    }

    pub fn predict(&self, doc: &Document) -> Result<Prediction> {
        Ok(self.predict_all([doc])?.remove(0))
    }

    /// Document representations in eval mode.
    pub fn represent<'a>(&self, docs: impl IntoIterator<Item = &'a Document>) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::inference();
        let generator = self.generator.bind(&mut tape, &self.store, false);
        docs.into_iter()
            .map(|doc| {
                encode_document(&mut tape, &generator, &doc.sentences)
                    .map(|e| e.repr.data().to_vec())
                    .map_err(|e| e.in_document(&doc.id))
            })
            .collect()
    }
}

/// Fraction of documents whose predicted sentiment matches the gold label.
pub fn evaluate(model: &Hagan, docs: &[LabeledDocument]) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::Usage("evaluate on an empty document set".into()));
    }
    let preds = model.predict_all(docs.iter().map(|d| &d.doc))?;
    let correct = preds
        .iter()
        .zip(docs)
        .filter(|(p, d)| Sentiment::from_class_index(p.class()) == Some(d.sentiment))
        .count();
    Ok(correct as f64 / docs.len() as f64)
}

/// Helper for training code: class distribution of one document on `tape`.
pub(crate) fn forward_document<R: rand::Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    doc: &Document,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let enc = encode_document(tape, &bound.generator, &doc.sentences)
        .map_err(|e| e.in_document(&doc.id))?;
    discriminate(tape, &bound.discriminator, &enc.repr, training, rng)
}
