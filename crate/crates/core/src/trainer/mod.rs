//! Alternating adversarial training: discriminator steps with the generator
//! frozen, then a generator step with the discriminator frozen.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use optim::{rmsprop_step, rmsprop_update, OptimizerState, RmsPropConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::domain_probe_accuracy;
use crate::autodiff::{ParamId, Tape, Var};
use crate::corpus::{make_batches, Document, EvalSets, LabeledDocument, TrainingView};
use crate::discriminator::{domain_dist, sentiment_dist, DiscriminatorDims};
use crate::error::{Error, Result};
use crate::generator::GeneratorDims;
use crate::losses::{
    discriminator_loss, domain_confusion_loss, domain_loss, entropy_loss, generator_loss,
    sentiment_loss, Domain, LossWeights,
};
use crate::model::{evaluate, forward_document, Hagan, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub embed_dim: usize,
    pub word_hidden: usize,
    pub sent_hidden: usize,
    pub disc_hidden: Vec<usize>,
    pub keep_prob: f64,
    pub bounded_logits: bool,
    pub batch_size: usize,
    pub optimizer: RmsPropConfig,
    pub epochs: usize,
    /// Discriminator steps per generator step.
    pub disc_steps: usize,
    pub seed: u64,
    pub source_test_fraction: f64,
    pub vocab_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            embed_dim: 16,
            word_hidden: 16,
            sent_hidden: 16,
            disc_hidden: vec![32, 16],
            keep_prob: 0.75,
            bounded_logits: true,
            batch_size: 100,
            optimizer: RmsPropConfig::default(),
            epochs: 30,
            disc_steps: 1,
            seed: 0,
            source_test_fraction: 0.2,
            vocab_limit: 10_000,
        }
    }
}

impl TrainConfig {
    /// Settings for the desk-scale synthetic experiment: a larger step and
    /// smaller batches than the defaults, which stay at chance for 30 epochs
    /// on a 320-document training set.
    pub fn synthetic() -> Self {
        TrainConfig {
            batch_size: 10,
            optimizer: RmsPropConfig {
                learning_rate: 0.01,
                ..RmsPropConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.disc_steps == 0 || self.vocab_limit == 0 {
            return Err(Error::Config(
                "batch size, discriminator steps and vocabulary limit must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn model_spec(&self, vocab_size: usize) -> ModelSpec {
        let generator = GeneratorDims {
            vocab_size,
            embed_dim: self.embed_dim,
            word_hidden: self.word_hidden,
            sent_hidden: self.sent_hidden,
        };
        ModelSpec {
            discriminator: DiscriminatorDims {
                input_dim: generator.repr_dim(),
                hidden: self.disc_hidden.clone(),
                num_sentiments: 2,
                keep_prob: self.keep_prob,
                bounded_logits: self.bounded_logits,
            },
            generator,
        }
    }
}

/// Independent seeds for the separate random streams of one run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const INIT_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const LABELED_STREAM: u64 = 3;
const SOURCE_STREAM: u64 = 4;
const TARGET_STREAM: u64 = 5;
const CONFUSION_STREAM: u64 = 6;
const PROBE_STREAM: u64 = 7;

/// Endless batches over a document list, reshuffled on every pass.
struct BatchStream<'a, T> {
    docs: &'a [T],
    batch_size: usize,
    seed: u64,
    pass: u64,
    queue: std::vec::IntoIter<Vec<&'a T>>,
}

impl<'a, T> BatchStream<'a, T> {
    fn new(docs: &'a [T], batch_size: usize, seed: u64) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Usage("training stream has no documents".into()));
        }
        Ok(BatchStream {
            docs,
            batch_size,
            seed,
            pass: 0,
            queue: Vec::new().into_iter(),
        })
    }

    fn next_batch(&mut self) -> Result<Vec<&'a T>> {
        if let Some(b) = self.queue.next() {
            return Ok(b);
        }
        let seed = derive_seed(self.seed, self.pass);
        self.pass += 1;
        self.queue = make_batches(self.docs, self.batch_size, seed)?.into_iter();
        Ok(self.queue.next().expect("non-empty stream"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Discriminator,
    Generator,
}

/// Fingerprints of the frozen parameter set around one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseCheck {
    pub epoch: usize,
    pub phase: Phase,
    pub frozen_before: u64,
    pub frozen_after: u64,
}

/// One line of the training log. Epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub disc_loss: Option<f64>,
    pub gen_loss: Option<f64>,
    pub source_acc: Option<f64>,
    pub target_acc: Option<f64>,
    pub probe_acc: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch\tL_D\tL_G\tsrc_acc\ttgt_acc\tdomain_probe_acc";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl EpochRecord {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch,
            cell(self.disc_loss),
            cell(self.gen_loss),
            cell(self.source_acc),
            cell(self.target_acc),
            cell(self.probe_acc)
        )
    }
}

/// Header plus one line per epoch.
pub fn log_to_tsv(log: &[EpochRecord]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&r.to_tsv());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: Vec<EpochRecord>,
    pub phases: Vec<PhaseCheck>,
}

pub struct Trainer {
    pub model: Hagan,
    pub config: TrainConfig,
    pub optimizer: OptimizerState,
    dropout_rng: ChaCha8Rng,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl Trainer {
    pub fn new(config: TrainConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let model = Hagan::new(config.model_spec(vocab_size), derive_seed(config.seed, INIT_STREAM))?;
        Ok(Trainer {
            dropout_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, DROPOUT_STREAM)),
            model,
            config,
            optimizer: OptimizerState::new(),
        })
    }

    /// One discriminator update: `L_sen + λ_D · L_dom` with the generator frozen.
    pub fn discriminator_step(
        &mut self,
        labeled: &[&LabeledDocument],
        mixed: &[&Document],
    ) -> Result<f64> {
        let c = self.model.num_sentiments();
        self.model.store.zero_grads();
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, false, true);
        let rng = &mut self.dropout_rng;
        let mut sen = Vec::with_capacity(labeled.len());
        for d in labeled {
            let p = forward_document(&mut tape, &bound, &d.doc, true, rng)?;
            sen.push((sentiment_dist(&mut tape, &p, c)?, d.sentiment.class_index()));
        }
        let l_sen = sentiment_loss(&mut tape, &sen)?;
        let loss = if self.config.weights.lambda_d > 0.0 {
            let mut dom = Vec::with_capacity(mixed.len());
            for d in mixed {
                let p = forward_document(&mut tape, &bound, d, true, rng)?;
                dom.push((domain_dist(&mut tape, &p, c)?, d.domain));
            }
            let l_dom = domain_loss(&mut tape, &dom)?;
            discriminator_loss(&mut tape, &l_sen, &l_dom, &self.config.weights)?
        } else {
            l_sen
        };
        self.apply(&tape, &loss, &self.model.discriminator_ids())
    }

    /// One generator update: `L_sen + λ_G¹ · L_dom^c + λ_G² · L_ent` with the
    /// discriminator frozen. Target documents enter without labels.
    pub fn generator_step(
        &mut self,
        labeled: &[&LabeledDocument],
        target: &[&Document],
    ) -> Result<f64> {
        let c = self.model.num_sentiments();
        let w = self.config.weights;
        self.model.store.zero_grads();
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, true, false);
        let rng = &mut self.dropout_rng;
        let mut sen = Vec::with_capacity(labeled.len());
        for d in labeled {
            let p = forward_document(&mut tape, &bound, &d.doc, true, rng)?;
            sen.push((sentiment_dist(&mut tape, &p, c)?, d.sentiment.class_index()));
        }
        let l_sen = sentiment_loss(&mut tape, &sen)?;
        let loss = if w.lambda_g1 > 0.0 || w.lambda_g2 > 0.0 {
            let mut conf = Vec::with_capacity(target.len());
            let mut ent = Vec::with_capacity(target.len());
            for d in target {
                if d.domain != Domain::Target {
                    return Err(Error::Usage(format!("document {} is not a target document", d.id)));
                }
                let p = forward_document(&mut tape, &bound, d, true, rng)?;
                conf.push((domain_dist(&mut tape, &p, c)?, Domain::Target));
                ent.push(sentiment_dist(&mut tape, &p, c)?);
            }
            let l_conf = domain_confusion_loss(&mut tape, &conf)?;
            let l_ent = entropy_loss(&mut tape, &ent)?;
            generator_loss(&mut tape, &l_sen, &l_conf, &l_ent, &w)?
        } else {
            l_sen
        };
        self.apply(&tape, &loss, &self.model.generator_ids())
    }

    fn apply(&mut self, tape: &Tape, loss: &Var, active: &[ParamId]) -> Result<f64> {
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Diverged(format!("loss is {value}")));
        }
        tape.backward(loss, &mut self.model.store)?;
        rmsprop_step(&mut self.model.store, active, &mut self.optimizer, &self.config.optimizer)?;
        Ok(value)
    }

    /// Run one phase and confirm the other parameter set did not move.
    fn checked_phase(
        &mut self,
        epoch: usize,
        phase: Phase,
        checks: &mut Vec<PhaseCheck>,
        step: impl FnOnce(&mut Self) -> Result<f64>,
    ) -> Result<f64> {
        let frozen = match phase {
            Phase::Discriminator => self.model.generator_ids(),
            Phase::Generator => self.model.discriminator_ids(),
        };
        let frozen_before = self.model.store.fingerprint(&frozen);
        let loss = step(self)?;
        let frozen_after = self.model.store.fingerprint(&frozen);
        if frozen_before != frozen_after {
            return Err(Error::FreezeViolation(match phase {
                Phase::Discriminator => "discriminator",
                Phase::Generator => "generator",
            }));
        }
        checks.push(PhaseCheck {
            epoch,
            phase,
            frozen_before,
            frozen_after,
        });
        Ok(loss)
    }

    /// Metrics of the current model; absent entries mean an empty set.
    pub fn measure(&self, view: &TrainingView<'_>, eval: &EvalSets<'_>) -> Result<EpochRecord> {
        let acc = |docs: &[LabeledDocument]| -> Result<Option<f64>> {
            if docs.is_empty() {
                Ok(None)
            } else {
                evaluate(&self.model, docs).map(Some)
            }
        };
        let probe = if view.unlabeled_source.len() >= 2 && view.unlabeled_target.len() >= 2 {
            let s = self.model.represent(view.unlabeled_source)?;
            let t = self.model.represent(view.unlabeled_target)?;
            Some(domain_probe_accuracy(&s, &t, derive_seed(self.config.seed, PROBE_STREAM))?)
        } else {
            None
        };
        Ok(EpochRecord {
            epoch: 0,
            disc_loss: None,
            gen_loss: None,
            source_acc: acc(eval.source_test)?,
            target_acc: acc(eval.target_test)?,
            probe_acc: probe,
        })
    }

    /// Train for `config.epochs` epochs. An epoch is one pass over the
    /// labeled source batches; each round runs `disc_steps` discriminator
    /// steps then one generator step.
    pub fn run(&mut self, view: TrainingView<'_>, eval: EvalSets<'_>) -> Result<TrainReport> {
        let seed = self.config.seed;
        let bs = self.config.batch_size;
        let half = bs.div_ceil(2);
        let mut labeled = BatchStream::new(view.labeled_source, bs, derive_seed(seed, LABELED_STREAM))?;
        let source_docs: Vec<Document> = view
            .labeled_source
            .iter()
            .map(|d| d.doc.clone())
            .chain(view.unlabeled_source.iter().cloned())
            .collect();
        let adversarial = self.config.weights.lambda_d > 0.0
            || self.config.weights.lambda_g1 > 0.0
            || self.config.weights.lambda_g2 > 0.0;
        if adversarial && view.unlabeled_target.is_empty() {
            return Err(Error::Usage("adversarial training needs unlabeled target documents".into()));
        }
        let mut source = BatchStream::new(&source_docs, half, derive_seed(seed, SOURCE_STREAM))?;
        let streams = if adversarial {
            Some((
                BatchStream::new(view.unlabeled_target, half, derive_seed(seed, TARGET_STREAM))?,
                BatchStream::new(view.unlabeled_target, bs, derive_seed(seed, CONFUSION_STREAM))?,
            ))
        } else {
            None
        };
        let (mut target, mut confusion) = match streams {
            Some((t, c)) => (Some(t), Some(c)),
            None => (None, None),
        };
        let rounds = view.labeled_source.len().div_ceil(bs);

        let mut log = vec![self.measure(&view, &eval)?];
        let mut phases = Vec::new();
        for epoch in 1..=self.config.epochs {
            let mut d_losses = Vec::new();
            let mut g_losses = Vec::new();
            for _ in 0..rounds {
                for _ in 0..self.config.disc_steps {
                    let lab = labeled.next_batch()?;
                    let mut mixed: Vec<&Document> = Vec::new();
                    if let Some(t) = target.as_mut() {
                        mixed.extend(source.next_batch()?);
                        mixed.extend(t.next_batch()?);
                    }
                    let l = self.checked_phase(epoch, Phase::Discriminator, &mut phases, |tr| {
                        tr.discriminator_step(&lab, &mixed)
                    })?;
                    d_losses.push(l);
                }
                let lab = labeled.next_batch()?;
                let tgt = match confusion.as_mut() {
                    Some(c) => c.next_batch()?,
                    None => Vec::new(),
                };
                let l = self.checked_phase(epoch, Phase::Generator, &mut phases, |tr| {
                    tr.generator_step(&lab, &tgt)
                })?;
                g_losses.push(l);
            }
            let mut record = self.measure(&view, &eval)?;
            record.epoch = epoch;
            record.disc_loss = mean(&d_losses);
            record.gen_loss = mean(&g_losses);
            log.push(record);
        }
        Ok(TrainReport { log, phases })
    }
}
