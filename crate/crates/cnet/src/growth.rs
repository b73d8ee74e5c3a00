//! Constructive growth: unit-by-unit network expansion gated by a convergence
//! test, incremental feature-group learning, chunk-to-chunk transfer, and the
//! full-refit baseline.
//!
//! Growth always freezes previously accepted parameters: only the most recent
//! block and the output unit train. A candidate unit that fails to improve the
//! criterion metric by at least the threshold is rolled back, and growth
//! stops.

use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::{Dataset, GroupPlan};
use crate::error::{Error, Result};
use crate::netgraph::{BlockId, InitPolicy, NetworkGraph, SourceRef, TrainableSelector};
use crate::numerics::Activation;
use crate::traincore::{converged, train, TrainConfig, TrainResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowthConfig {
    pub train: TrainConfig,
    /// Units in the sub-network that seeds each growth phase.
    pub initial_units: usize,
    /// Cap on single units added per growth phase, as a runaway guard.
    pub max_units: usize,
    pub hidden_init: InitPolicy,
    /// New output connections; zeros keep predictions unchanged on insert.
    pub output_init: InitPolicy,
    pub activation: Activation,
    pub output_activation: Activation,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            train: TrainConfig::default(),
            initial_units: 2,
            max_units: 256,
            hidden_init: InitPolicy::default_hidden(),
            output_init: InitPolicy::Zeros,
            activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
        }
    }
}

impl GrowthConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.initial_units == 0 {
            return Err(Error::InvalidArgument("initial_units must be >= 1".into()));
        }
        if self.max_units == 0 {
            return Err(Error::InvalidArgument("max_units must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The candidate unit improved the metric by less than the threshold.
    Threshold,
    /// The unit cap was reached while the metric was still improving.
    UnitCap,
}

/// One train-and-judge round of the growth loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthStep {
    /// Hidden units in the whole network when this round trained.
    pub units_total: usize,
    /// Metric of the last accepted state; absent for the first round, which
    /// has nothing to compare against and is always accepted.
    pub metric_before: Option<f64>,
    pub metric_after: f64,
    pub accepted: bool,
    pub epochs: usize,
    pub wall_time: f64,
    /// [`frozen_digest`] taken immediately before and after this round's
    /// training; the two must always match.
    pub frozen_digest_before: u64,
    pub frozen_digest_after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthTrace {
    pub steps: Vec<GrowthStep>,
    pub stop_reason: StopReason,
}

impl GrowthTrace {
    /// Units accepted across all steps is implicit; this is the wall time of
    /// the whole phase.
    pub fn total_wall_time(&self) -> f64 {
        self.steps.iter().map(|s| s.wall_time).sum()
    }

    pub fn total_epochs(&self) -> usize {
        self.steps.iter().map(|s| s.epochs).sum()
    }
}

fn hidden_units(net: &NetworkGraph) -> usize {
    net.blocks().iter().map(|b| b.n_units).sum()
}

/// FNV-1a digest over the bit patterns of all frozen parameters. Recorded
/// before and after each training round so any mutation of frozen weights is
/// detectable from the trace alone.
pub fn frozen_digest(net: &NetworkGraph) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for block in net.blocks() {
        if block.trainable {
            continue;
        }
        eat(&block.id.to_le_bytes());
        for v in block.w.data() {
            eat(&v.to_le_bytes());
        }
        for v in &block.b {
            eat(&v.to_le_bytes());
        }
    }
    if let Some(out) = net.output_unit() {
        if !out.trainable {
            for v in &out.w {
                eat(&v.to_le_bytes());
            }
            eat(&out.b.to_le_bytes());
        }
    }
    h
}

/// Adds the sub-network that seeds a growth phase and marks it (plus the
/// output unit) as the only trainable parameters.
pub fn start_subnet(
    net: &mut NetworkGraph,
    sources: &[SourceRef],
    cfg: &GrowthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BlockId> {
    cfg.validate()?;
    let id = net.add_unit_block(
        cfg.initial_units,
        sources.to_vec(),
        cfg.activation,
        cfg.hidden_init,
        cfg.output_init,
        rng,
    )?;
    net.set_trainable(TrainableSelector::NewAndOutput, true)?;
    Ok(id)
}

/// Trains the current trainable sub-network, then repeatedly adds one unit at
/// a time (drawing inputs from `sources`) until the criterion metric stops
/// improving by the threshold or the unit cap is hit. A rejected unit is
/// rolled back so the returned network is the last accepted state.
pub fn grow_until_no_convergence(
    net: &mut NetworkGraph,
    train_data: &Dataset,
    valid_data: Option<&Dataset>,
    sources: &[SourceRef],
    cfg: &GrowthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GrowthTrace> {
    cfg.validate()?;
    let mut steps = Vec::new();
    let mut previous: Option<f64> = None;
    let mut snapshot: Option<NetworkGraph> = None;
    let mut added = 0usize;
    loop {
        let start = Instant::now();
        let frozen_digest_before = frozen_digest(net);
        let result = train(net, train_data, valid_data, &cfg.train)?;
        let current = result.final_metric;
        // the very first round has no accepted value to compare against
        let accepted = match previous {
            None => true,
            Some(prev) => converged(prev, current, cfg.train.threshold, cfg.train.criterion),
        };
        steps.push(GrowthStep {
            units_total: hidden_units(net),
            metric_before: previous,
            metric_after: current,
            accepted,
            epochs: result.epochs_run,
            wall_time: start.elapsed().as_secs_f64(),
            frozen_digest_before,
            frozen_digest_after: frozen_digest(net),
        });
        if !accepted {
            *net = snapshot.take().expect("a rejected round implies an accepted state");
            return Ok(GrowthTrace { steps, stop_reason: StopReason::Threshold });
        }
        previous = Some(current);
        if added >= cfg.max_units {
            return Ok(GrowthTrace { steps, stop_reason: StopReason::UnitCap });
        }
        snapshot = Some(net.clone());
        net.add_unit_block(
            1,
            sources.to_vec(),
            cfg.activation,
            cfg.hidden_init,
            cfg.output_init,
            rng,
        )?;
        net.set_trainable(TrainableSelector::NewAndOutput, true)?;
        added += 1;
    }
}

/// Incremental feature learning over feature groups: each group extends the
/// visible feature set, seeds a fresh sub-network over the cumulative
/// features, and grows until no convergence. Earlier sub-networks stay
/// frozen.
///
/// With a single group this reduces exactly to one [`start_subnet`] plus one
/// [`grow_until_no_convergence`] call over all features.
pub fn ifl_feature_groups(
    train_data: &Dataset,
    valid_data: Option<&Dataset>,
    plan: &GroupPlan,
    cfg: &GrowthConfig,
    seed: u64,
) -> Result<(NetworkGraph, Vec<GrowthTrace>)> {
    cfg.validate()?;
    plan.validate(train_data.width())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = NetworkGraph::empty(train_data.width())?;
    net.attach_output_unit(cfg.output_activation)?;
    let mut traces = Vec::with_capacity(plan.groups.len());
    let mut cumulative: Vec<usize> = Vec::new();
    for group in &plan.groups {
        cumulative.extend(group.indices.iter().copied());
        let sources: Vec<SourceRef> = cumulative.iter().map(|&i| SourceRef::Input(i)).collect();
        start_subnet(&mut net, &sources, cfg, &mut rng)?;
        traces.push(grow_until_no_convergence(
            &mut net, train_data, valid_data, &sources, cfg, &mut rng,
        )?);
    }
    Ok((net, traces))
}

/// Artifacts of the transfer path besides the grown network.
#[derive(Debug, Clone)]
pub struct TransferState {
    /// Model trained on the first chunk only, before any growth.
    pub initial: NetworkGraph,
    pub initial_result: TrainResult,
    /// The initial model retrained end-to-end on the incoming chunk.
    pub refitted: NetworkGraph,
    pub refit_result: TrainResult,
    /// The refitted model with its output unit removed; emits transformed
    /// features.
    pub headless: NetworkGraph,
    /// The incoming chunk mapped through the headless model.
    pub t_subset: Dataset,
}

/// Chunk-to-chunk incremental learning: train an initial network on the first
/// chunk, refit it on the second chunk, freeze it, then grow two new
/// sub-networks — one reading the frozen network's transformed features, one
/// reading the raw inputs. New blocks extend the existing output unit with
/// zero weights, so growth starts exactly from the refitted model's
/// predictions and can only be accepted when it improves on them.
pub fn ifl_transfer(
    chunk1_train: &Dataset,
    chunk1_valid: Option<&Dataset>,
    chunk2_train: &Dataset,
    chunk2_valid: Option<&Dataset>,
    layer_widths: &[usize],
    cfg: &GrowthConfig,
    seed: u64,
) -> Result<(NetworkGraph, Vec<GrowthTrace>, TransferState)> {
    cfg.validate()?;
    if chunk1_train.width() != chunk2_train.width() {
        return Err(Error::dim(
            "transfer chunks",
            chunk1_train.width().to_string(),
            chunk2_train.width().to_string(),
        ));
    }
    let mut net = NetworkGraph::new_network(
        chunk1_train.width(),
        layer_widths,
        cfg.activation,
        cfg.output_activation,
        cfg.hidden_init,
        seed,
    )?;
    let initial_result = train(&mut net, chunk1_train, chunk1_valid, &cfg.train)?;
    let initial = net;

    // refit: continue training the whole network on the incoming chunk
    let (refitted, refit_result) = refit(&initial, chunk2_train, chunk2_valid, &cfg.train)?;

    let mut headless = refitted.clone();
    headless.remove_output_unit()?;
    let t_width = headless.exposed_width()?;
    let mut rows = Vec::with_capacity(chunk2_train.n());
    for i in 0..chunk2_train.n() {
        rows.push(headless.forward_features(chunk2_train.row(i))?);
    }
    let t_names = (0..t_width).map(|i| format!("t{i}")).collect();
    let t_subset = Dataset::from_rows(
        t_names,
        rows,
        chunk2_train.labels().to_vec(),
        "transformed features of the incoming chunk",
    )?;

    // the grown model keeps the refitted output unit; new blocks extend it
    // with zero weights, so predictions start exactly where the refit left
    // them
    let mut grown = refitted.clone();
    let last = grown
        .last_block_id()
        .ok_or_else(|| Error::InvalidArgument("initial network has no blocks".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traces = Vec::with_capacity(2);

    // phase 1: units over the frozen network's transformed features
    let transfer_sources = vec![SourceRef::Block(last)];
    start_subnet(&mut grown, &transfer_sources, cfg, &mut rng)?;
    traces.push(grow_until_no_convergence(
        &mut grown,
        chunk2_train,
        chunk2_valid,
        &transfer_sources,
        cfg,
        &mut rng,
    )?);

    // phase 2: units over the raw inputs of the incoming chunk
    let raw_sources: Vec<SourceRef> = (0..chunk2_train.width()).map(SourceRef::Input).collect();
    start_subnet(&mut grown, &raw_sources, cfg, &mut rng)?;
    traces.push(grow_until_no_convergence(
        &mut grown,
        chunk2_train,
        chunk2_valid,
        &raw_sources,
        cfg,
        &mut rng,
    )?);

    Ok((
        grown,
        traces,
        TransferState {
            initial,
            initial_result,
            refitted,
            refit_result,
            headless,
            t_subset,
        },
    ))
}

/// Baseline: unfreeze everything and continue training the whole network on
/// the new data, preserving previously learned weights as the starting point.
pub fn refit(
    initial: &NetworkGraph,
    train_data: &Dataset,
    valid_data: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(NetworkGraph, TrainResult)> {
    let mut net = initial.clone();
    net.set_trainable(TrainableSelector::All, true)?;
    let result = train(&mut net, train_data, valid_data, cfg)?;
    Ok((net, result))
}
