//! Mini-batch SGD training that honors per-block freeze flags, patience-based
//! early stopping, and the convergence test gating network growth.
//!
//! Blocks that are frozen and have no trainable ancestors are "static": their
//! per-sample outputs cannot change during a training run, so they are
//! computed once and cached. Training a newly grown block therefore costs
//! only the new block and the output unit per epoch, which is what makes
//! incremental training cheaper than re-fitting the whole network.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::Dataset;
use crate::error::{Error, Result};
use crate::netgraph::{NetworkGraph, SourceRef};
use crate::numerics::{Loss, Matrix};

/// Metric used both for patience-based early stopping and for the growth
/// convergence test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    TrainLoss,
    ValidationAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub threshold: f64,
    pub criterion: Criterion,
    pub momentum: f64,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 1024,
            max_epochs: 100,
            patience: 10,
            threshold: 0.01,
            criterion: Criterion::ValidationAccuracy,
            momentum: 0.0,
            loss: Loss::BinaryCrossEntropy,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be >= 1".into()));
        }
        if self.threshold < 0.0 {
            return Err(Error::InvalidArgument("threshold must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppedBy {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    pub epochs_run: usize,
    pub final_metric: f64,
    pub metric_history: Vec<f64>,
    pub stopped_by: StoppedBy,
    pub wall_time: f64,
}

/// Growth convergence test: is the metric still improving by at least
/// `threshold`? Loss must drop; accuracy must rise.
pub fn converged(previous: f64, current: f64, threshold: f64, criterion: Criterion) -> bool {
    match criterion {
        Criterion::TrainLoss => previous - current >= threshold,
        Criterion::ValidationAccuracy => current - previous >= threshold,
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EvalMetric {
    Loss(Loss),
    /// Fraction of samples where (prediction >= 0.5) equals the label.
    Accuracy,
}

/// Evaluates a network over a dataset without caching.
pub fn evaluate(net: &NetworkGraph, data: &Dataset, metric: EvalMetric) -> Result<f64> {
    if data.n() == 0 {
        return Err(Error::EmptyDataset("evaluate".into()));
    }
    check_width(net, data)?;
    match metric {
        EvalMetric::Loss(loss) => {
            let preds: Result<Vec<f64>> = (0..data.n()).map(|i| net.forward(data.row(i))).collect();
            loss.value(&preds?, data.labels())
        }
        EvalMetric::Accuracy => {
            let mut correct = 0usize;
            for i in 0..data.n() {
                let p = net.forward(data.row(i))?;
                let predicted = if p >= 0.5 { 1.0 } else { 0.0 };
                if predicted == data.label(i) {
                    correct += 1;
                }
            }
            Ok(correct as f64 / data.n() as f64)
        }
    }
}

fn check_width(net: &NetworkGraph, data: &Dataset) -> Result<()> {
    if data.width() != net.input_width() {
        return Err(Error::dim(
            "dataset feature width",
            net.input_width().to_string(),
            data.width().to_string(),
        ));
    }
    Ok(())
}

/// Trains the network's trainable parameters with mini-batch SGD.
///
/// Data order is shuffled per epoch with the run seed; frozen parameters are
/// left bit-identical. Stops when the criterion metric fails to improve for
/// `patience` consecutive epochs, or at `max_epochs`.
pub fn train(
    net: &mut NetworkGraph,
    train_data: &Dataset,
    valid_data: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if train_data.n() == 0 {
        return Err(Error::EmptyDataset("train".into()));
    }
    check_width(net, train_data)?;
    if net.output_unit().is_none() {
        return Err(Error::NoOutputUnit);
    }
    let valid = match cfg.criterion {
        Criterion::ValidationAccuracy => {
            let v = valid_data.ok_or_else(|| {
                Error::InvalidArgument(
                    "validation data required for the validation_accuracy criterion".into(),
                )
            })?;
            if v.n() == 0 {
                return Err(Error::EmptyDataset("validation data".into()));
            }
            check_width(net, v)?;
            Some(v)
        }
        Criterion::TrainLoss => valid_data,
    };

    let start = Instant::now();
    let plan = EvalPlan::new(net);
    let train_cache = plan.build_cache(net, train_data)?;
    let valid_cache = match (cfg.criterion, valid) {
        (Criterion::ValidationAccuracy, Some(v)) => Some(plan.build_cache(net, v)?),
        _ => None,
    };

    let metric_of = |net: &NetworkGraph| -> Result<f64> {
        match cfg.criterion {
            Criterion::TrainLoss => {
                let mut total = 0.0;
                for i in 0..train_data.n() {
                    let fwd = plan.forward(net, train_data, &train_cache, i)?;
                    total += cfg.loss.sample_value(fwd.prediction, train_data.label(i));
                }
                Ok(total / train_data.n() as f64)
            }
            Criterion::ValidationAccuracy => {
                let v = valid.expect("validated above");
                let cache = valid_cache.as_ref().expect("built above");
                let mut correct = 0usize;
                for i in 0..v.n() {
                    let fwd = plan.forward(net, v, cache, i)?;
                    let predicted = if fwd.prediction >= 0.5 { 1.0 } else { 0.0 };
                    if predicted == v.label(i) {
                        correct += 1;
                    }
                }
                Ok(correct as f64 / v.n() as f64)
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..train_data.n()).collect();
    let mut velocity = Velocity::new(net);
    let mut history = Vec::new();
    let mut best: Option<f64> = None;
    let mut since_improve = 0usize;
    let mut stopped_by = StoppedBy::MaxEpochs;

    for _epoch in 0..cfg.max_epochs {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(cfg.batch_size) {
            let grads = plan.batch_gradients(net, train_data, &train_cache, batch, cfg.loss, false)?;
            velocity.apply(net, &grads, cfg.learning_rate, cfg.momentum)?;
        }
        let metric = metric_of(net)?;
        history.push(metric);
        let improved = match (cfg.criterion, best) {
            (_, None) => true,
            (Criterion::TrainLoss, Some(b)) => metric < b,
            (Criterion::ValidationAccuracy, Some(b)) => metric > b,
        };
        if improved {
            best = Some(metric);
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve >= cfg.patience {
                stopped_by = StoppedBy::Patience;
                break;
            }
        }
    }

    let final_metric = match history.last() {
        Some(&m) => m,
        None => metric_of(net)?, // max_epochs == 0
    };
    Ok(TrainResult {
        epochs_run: history.len(),
        final_metric,
        metric_history: history,
        stopped_by,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Gradient of the mean loss over a dataset with respect to every parameter,
/// in `param_vector` order and ignoring freeze flags. This is the analytic
/// side of the finite-difference gradient check.
pub fn full_loss_gradient(net: &NetworkGraph, data: &Dataset, loss: Loss) -> Result<Vec<f64>> {
    check_width(net, data)?;
    let plan = EvalPlan::all_dynamic(net);
    let cache = DatasetCache::default();
    let indices: Vec<usize> = (0..data.n()).collect();
    let grads = plan.batch_gradients(net, data, &cache, &indices, loss, true)?;
    let mut flat = Vec::with_capacity(net.total_param_count());
    for (idx, _) in net.blocks().iter().enumerate() {
        let (dw, db) = grads.blocks[idx].as_ref().expect("all blocks forced dynamic");
        flat.extend_from_slice(dw.data());
        flat.extend_from_slice(db);
    }
    flat.extend_from_slice(&grads.out_w);
    flat.push(grads.out_b);
    Ok(flat)
}

/// Which blocks can change during this training run, and which static
/// outputs must be cached because dynamic parts read them.
struct EvalPlan {
    dynamic: Vec<bool>,
    frontier: Vec<usize>,
}

#[derive(Default)]
struct DatasetCache {
    values: HashMap<usize, Vec<Vec<f64>>>,
}

struct CachedForward {
    /// (input, pre, out) for dynamic blocks, indexed by block position.
    traces: Vec<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>>,
    output_input: Vec<f64>,
    output_pre: f64,
    prediction: f64,
}

struct GradBuf {
    blocks: Vec<Option<(Matrix, Vec<f64>)>>,
    out_w: Vec<f64>,
    out_b: f64,
}

impl EvalPlan {
    fn new(net: &NetworkGraph) -> Self {
        let blocks = net.blocks();
        let index_of: HashMap<u32, usize> =
            blocks.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let mut dynamic = vec![false; blocks.len()];
        for (i, b) in blocks.iter().enumerate() {
            dynamic[i] = b.trainable
                || b.sources.iter().any(|s| match *s {
                    SourceRef::Block(id) => dynamic[index_of[&id]],
                    SourceRef::Input(_) => false,
                });
        }
        let mut needed = vec![false; blocks.len()];
        let mut mark = |id: u32| {
            let i = index_of[&id];
            if !dynamic[i] {
                needed[i] = true;
            }
        };
        for (i, b) in blocks.iter().enumerate() {
            if dynamic[i] {
                for s in &b.sources {
                    if let SourceRef::Block(id) = *s {
                        mark(id);
                    }
                }
            }
        }
        if let Some(out) = net.output_unit() {
            for &id in &out.connected {
                mark(id);
            }
        }
        let frontier = (0..blocks.len()).filter(|&i| needed[i]).collect();
        EvalPlan { dynamic, frontier }
    }

    fn all_dynamic(net: &NetworkGraph) -> Self {
        EvalPlan {
            dynamic: vec![true; net.blocks().len()],
            frontier: Vec::new(),
        }
    }

    /// Precomputes the outputs of frontier blocks for every sample.
    fn build_cache(&self, net: &NetworkGraph, data: &Dataset) -> Result<DatasetCache> {
        let mut cache = DatasetCache::default();
        if self.frontier.is_empty() {
            return Ok(cache);
        }
        for &idx in &self.frontier {
            cache.values.insert(idx, Vec::with_capacity(data.n()));
        }
        for i in 0..data.n() {
            let trace = net.forward_trace_blocks_only(data.row(i))?;
            for &idx in &self.frontier {
                cache
                    .values
                    .get_mut(&idx)
                    .unwrap()
                    .push(trace[idx].2.clone());
            }
        }
        Ok(cache)
    }

    fn forward(
        &self,
        net: &NetworkGraph,
        data: &Dataset,
        cache: &DatasetCache,
        sample: usize,
    ) -> Result<CachedForward> {
        let blocks = net.blocks();
        let x = data.row(sample);
        let mut traces: Vec<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>> = vec![None; blocks.len()];
        let fetch = |idx: usize,
                     traces: &Vec<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>>|
         -> Result<Vec<f64>> {
            if let Some(t) = &traces[idx] {
                Ok(t.2.clone())
            } else if let Some(vals) = cache.values.get(&idx) {
                Ok(vals[sample].clone())
            } else {
                Err(Error::InvalidArgument(format!(
                    "block {} neither dynamic nor cached",
                    blocks[idx].id
                )))
            }
        };
        for (i, b) in blocks.iter().enumerate() {
            if !self.dynamic[i] {
                continue;
            }
            let mut input = Vec::with_capacity(b.w.cols());
            for s in &b.sources {
                match *s {
                    SourceRef::Input(slot) => input.push(x[slot]),
                    SourceRef::Block(id) => {
                        let sidx = blocks.iter().position(|bb| bb.id == id).unwrap();
                        input.extend(fetch(sidx, &traces)?);
                    }
                }
            }
            let pre = crate::numerics::affine_forward(&b.w, &b.b, &input)?;
            let out = b.activation.apply(&pre);
            traces[i] = Some((input, pre, out));
        }
        let output = net.output_unit().ok_or(Error::NoOutputUnit)?;
        let mut output_input = Vec::with_capacity(output.w.len());
        for &id in &output.connected {
            let idx = blocks.iter().position(|bb| bb.id == id).unwrap();
            output_input.extend(fetch(idx, &traces)?);
        }
        let mut pre = output.b;
        for (w, v) in output.w.iter().zip(&output_input) {
            pre += w * v;
        }
        Ok(CachedForward {
            traces,
            output_input,
            output_pre: pre,
            prediction: output.activation.apply_scalar(pre),
        })
    }

    /// Mean gradient over a batch. With `force_all` every block contributes
    /// regardless of its freeze flag (oracle support).
    fn batch_gradients(
        &self,
        net: &NetworkGraph,
        data: &Dataset,
        cache: &DatasetCache,
        batch: &[usize],
        loss: Loss,
        force_all: bool,
    ) -> Result<GradBuf> {
        let blocks = net.blocks();
        let output = net.output_unit().ok_or(Error::NoOutputUnit)?;
        let mut grads = GradBuf {
            blocks: blocks
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    if (b.trainable || force_all) && self.dynamic[i] {
                        Some((Matrix::zeros(b.n_units, b.w.cols()), vec![0.0; b.n_units]))
                    } else {
                        None
                    }
                })
                .collect(),
            out_w: vec![0.0; output.w.len()],
            out_b: 0.0,
        };

        for &sample in batch {
            let fwd = self.forward(net, data, cache, sample)?;
            let dloss = loss.sample_grad(fwd.prediction, data.label(sample));
            let delta_out = dloss * output.activation.derivative(fwd.output_pre);

            if output.trainable || force_all {
                for (g, v) in grads.out_w.iter_mut().zip(&fwd.output_input) {
                    *g += delta_out * v;
                }
                grads.out_b += delta_out;
            }

            // upstream gradients on block outputs, by block position
            let mut gout: Vec<Option<Vec<f64>>> = vec![None; blocks.len()];
            let mut offset = 0;
            for &id in &output.connected {
                let idx = blocks.iter().position(|bb| bb.id == id).unwrap();
                let width = blocks[idx].n_units;
                if self.dynamic[idx] {
                    let g = gout[idx].get_or_insert_with(|| vec![0.0; width]);
                    for (u, gv) in g.iter_mut().enumerate() {
                        *gv += output.w[offset + u] * delta_out;
                    }
                }
                offset += width;
            }

            for i in (0..blocks.len()).rev() {
                let Some(g) = gout[i].take() else { continue };
                let b = &blocks[i];
                let (input, pre, _) = fwd.traces[i].as_ref().expect("dynamic block was evaluated");
                let delta: Vec<f64> = g
                    .iter()
                    .zip(pre)
                    .map(|(&gv, &z)| gv * b.activation.derivative(z))
                    .collect();
                if let Some((dw, db)) = grads.blocks[i].as_mut() {
                    for u in 0..b.n_units {
                        for (c, iv) in input.iter().enumerate() {
                            let cur = dw.get(u, c);
                            dw.set(u, c, cur + delta[u] * iv);
                        }
                        db[u] += delta[u];
                    }
                }
                // propagate into dynamic sources
                let mut at = 0;
                for s in &b.sources {
                    match *s {
                        SourceRef::Input(_) => at += 1,
                        SourceRef::Block(id) => {
                            let sidx = blocks.iter().position(|bb| bb.id == id).unwrap();
                            let width = blocks[sidx].n_units;
                            if self.dynamic[sidx] {
                                let sg =
                                    gout[sidx].get_or_insert_with(|| vec![0.0; width]);
                                for u in 0..b.n_units {
                                    for c in 0..width {
                                        sg[c] += b.w.get(u, at + c) * delta[u];
                                    }
                                }
                            }
                            at += width;
                        }
                    }
                }
            }
        }

        let scale = 1.0 / batch.len() as f64;
        for entry in grads.blocks.iter_mut().flatten() {
            for v in entry.0.data_mut() {
                *v *= scale;
            }
            for v in &mut entry.1 {
                *v *= scale;
            }
        }
        for v in &mut grads.out_w {
            *v *= scale;
        }
        grads.out_b *= scale;
        Ok(grads)
    }
}

/// Momentum buffers matching the network's trainable parameters.
struct Velocity {
    blocks: Vec<Option<(Matrix, Vec<f64>)>>,
    out_w: Vec<f64>,
    out_b: f64,
}

impl Velocity {
    fn new(net: &NetworkGraph) -> Self {
        Velocity {
            blocks: net
                .blocks()
                .iter()
                .map(|b| {
                    if b.trainable {
                        Some((Matrix::zeros(b.n_units, b.w.cols()), vec![0.0; b.n_units]))
                    } else {
                        None
                    }
                })
                .collect(),
            out_w: net.output_unit().map_or_else(Vec::new, |o| vec![0.0; o.w.len()]),
            out_b: 0.0,
        }
    }

    fn apply(
        &mut self,
        net: &mut NetworkGraph,
        grads: &GradBuf,
        lr: f64,
        momentum: f64,
    ) -> Result<()> {
        let ids: Vec<u32> = net.blocks().iter().map(|b| b.id).collect();
        for (i, id) in ids.iter().enumerate() {
            let (Some((vw, vb)), Some((gw, gb))) =
                (self.blocks[i].as_mut(), grads.blocks[i].as_ref())
            else {
                continue;
            };
            let block = net.block_mut(*id)?;
            if !block.trainable {
                continue;
            }
            for ((v, g), w) in vw
                .data_mut()
                .iter_mut()
                .zip(gw.data())
                .zip(block.w.data_mut())
            {
                *v = momentum * *v + g;
                *w -= lr * *v;
            }
            for ((v, g), b) in vb.iter_mut().zip(gb).zip(block.b.iter_mut()) {
                *v = momentum * *v + g;
                *b -= lr * *v;
            }
        }
        if let Some(out) = net.output_unit_mut() {
            if out.trainable {
                for ((v, g), w) in self.out_w.iter_mut().zip(&grads.out_w).zip(out.w.iter_mut()) {
                    *v = momentum * *v + g;
                    *w -= lr * *v;
                }
                self.out_b = momentum * self.out_b + grads.out_b;
                out.b -= lr * self.out_b;
            }
        }
        Ok(())
    }
}
