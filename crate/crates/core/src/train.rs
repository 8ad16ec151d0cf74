//! Training loop and evaluation.

use rand::seq::index;

use crate::accounting::{memory_report, RegimeReport, TaskMetrics};
use crate::autograd::{AdamW, AdamWConfig, Graph, ParamGroup};
use crate::config::RunConfig;
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::losses::{precision_at, BBox};
use crate::model::{batch_loss, EncodedSample, ForwardOut, Model};
use crate::report::TrainingReport;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub precision: f64,
    pub mean_loss: f64,
    pub preds: Vec<BBox>,
}

/// Progress events passed to the caller's logger.
#[derive(Debug, Clone, Copy)]
pub enum Progress {
    Step { step: usize, loss: f64 },
    Eval { step: usize, precision: f64 },
}

/// Samples with their cached encoder outputs, when the regime allows it.
pub struct Prepared<'a> {
    pub samples: &'a [Sample],
    pub cache: Option<Vec<EncodedSample>>,
}

impl<'a> Prepared<'a> {
    pub fn new(model: &Model, samples: &'a [Sample]) -> Result<Self> {
        let cache = if model.can_cache() {
            Some(
                samples
                    .iter()
                    .map(|s| model.encode(&s.image, &s.tokens))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self { samples, cache })
    }

    fn forward(&self, model: &Model, g: &mut Graph, i: usize) -> Result<ForwardOut> {
        match &self.cache {
            Some(c) => model.forward_cached(g, &c[i]),
            None => model.forward(g, &self.samples[i].image, &self.samples[i].tokens),
        }
    }
}

pub fn evaluate(model: &Model, data: &Prepared<'_>, lambda: f64, beta: f64, threshold: f64) -> Result<EvalResult> {
    let mut preds = Vec::with_capacity(data.samples.len());
    let mut total = 0.0;
    for (i, s) in data.samples.iter().enumerate() {
        let mut g = Graph::new();
        let out = data.forward(model, &mut g, i)?;
        let loss = batch_loss(&mut g, &[(out.pred, s.gt)], lambda, beta)?;
        total += g.value(loss).data()[0];
        preds.push(Model::pred_box(&g, &out));
    }
    let gts: Vec<BBox> = data.samples.iter().map(|s| s.gt).collect();
    Ok(EvalResult {
        precision: precision_at(&preds, &gts, threshold)?,
        mean_loss: total / data.samples.len().max(1) as f64,
        preds,
    })
}

fn lr_for(cfg: &RunConfig, step: usize) -> impl Fn(ParamGroup) -> f64 + '_ {
    let o = &cfg.optim;
    let decay_step = (o.decay_at * o.steps as f64).round() as usize;
    let mut mult = if step >= decay_step { o.decay_factor } else { 1.0 };
    if step < o.warmup {
        mult *= (step + 1) as f64 / o.warmup as f64;
    }
    move |g| {
        mult * match g {
            ParamGroup::Fusion | ParamGroup::Head => o.lr_vl,
            ParamGroup::Adapter | ParamGroup::Lora => o.lr_adapter,
            ParamGroup::VisionEncoder | ParamGroup::LanguageEncoder => o.lr_encoder,
        }
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainingReport,
}

/// Trains from scratch. Deterministic in the configuration and data.
pub fn train(cfg: &RunConfig, data: &Dataset, mut log: impl FnMut(Progress)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.len() < cfg.optim.batch_size || data.val.is_empty() {
        return Err(Error::Config(format!(
            "dataset has {} train / {} val samples; batch size is {}",
            data.train.len(),
            data.val.len(),
            cfg.optim.batch_size
        )));
    }
    let mut model = Model::build(cfg.model_config()?)?;
    let retained = memory_report(&model, &data.train[..1])?;
    let train_set = Prepared::new(&model, &data.train)?;
    let val_set = Prepared::new(&model, &data.val)?;
    let initial = evaluate(&model, &val_set, cfg.lambda, cfg.beta, cfg.threshold)?;
    log(Progress::Eval {
        step: 0,
        precision: initial.precision,
    });

    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: cfg.optim.weight_decay,
        ..AdamWConfig::default()
    });
    let mut losses = Vec::with_capacity(cfg.optim.steps);
    for step in 0..cfg.optim.steps {
        let mut rng = stream_rng(cfg.model.trainable_seed, Stream::Batches, step as u64);
        let batch = index::sample(&mut rng, data.train.len(), cfg.optim.batch_size).into_vec();
        let mut g = Graph::new();
        let mut preds = Vec::with_capacity(batch.len());
        for &i in &batch {
            let out = train_set.forward(&model, &mut g, i)?;
            preds.push((out.pred, data.train[i].gt));
        }
        let loss = batch_loss(&mut g, &preds, cfg.lambda, cfg.beta)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Contract(format!("loss became {value} at step {step}")));
        }
        let grads = g.backward(loss)?;
        opt.step(&mut model.store, &grads, lr_for(cfg, step))?;
        losses.push(value);
        log(Progress::Step { step, loss: value });
    }

    let last = if cfg.optim.steps == 0 {
        initial.clone()
    } else {
        evaluate(&model, &val_set, cfg.lambda, cfg.beta, cfg.threshold)?
    };
    if cfg.optim.steps > 0 {
        log(Progress::Eval {
            step: cfg.optim.steps,
            precision: last.precision,
        });
    }
    let loss_curve: Vec<f64> = losses
        .chunks(cfg.eval_every)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    let metrics = TaskMetrics {
        steps: cfg.optim.steps,
        initial_loss: losses.first().copied().unwrap_or(initial.mean_loss),
        final_loss: losses.last().copied().unwrap_or(initial.mean_loss),
        loss_curve,
        precision_at_05: last.precision,
    };
    let report = TrainingReport {
        config_hash: cfg.hash(),
        regime_report: RegimeReport::new(&model, retained, Some(metrics)),
        initial_val_precision: initial.precision,
        initial_val_loss: initial.mean_loss,
        final_val_loss: last.mean_loss,
    };
    Ok(TrainOutcome { model, report })
}
