//! Dynamic network topology: unit blocks appended at runtime, per-block
//! freeze flags, output-unit surgery for transfer learning, and a bit-exact
//! model file format.
//!
//! A "hidden unit converted to a layer" is modeled as a [`UnitBlock`] with
//! `n_units = 1`; the parameter-free concatenation node is implicit in the
//! output unit's ordered view over all connected blocks.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{affine_forward, Activation, Matrix};

pub type BlockId = u32;

pub const MODEL_FORMAT: &str = "cnet";
pub const MODEL_VERSION: u32 = 1;

/// Where a block's inputs come from: a single input-layer slot or the full
/// output of an earlier block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceRef {
    Input(usize),
    Block(BlockId),
}

/// Weight initialization policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    GaussianStd(f64),
    Xavier,
    Zeros,
}

impl InitPolicy {
    /// Draft default for new hidden units.
    pub fn default_hidden() -> Self {
        InitPolicy::GaussianStd(0.01)
    }

    fn sample(self, rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitPolicy::Zeros => 0.0,
            InitPolicy::GaussianStd(sigma) => {
                Normal::new(0.0, sigma).expect("valid std").sample(rng)
            }
            InitPolicy::Xavier => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Uniform::new_inclusive(-bound, bound).sample(rng)
            }
        }
    }
}

/// One or more hidden units added as a group.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitBlock {
    pub id: BlockId,
    pub n_units: usize,
    pub sources: Vec<SourceRef>,
    pub w: Matrix,
    pub b: Vec<f64>,
    pub activation: Activation,
    pub trainable: bool,
}

impl UnitBlock {
    pub fn param_count(&self) -> usize {
        self.n_units * self.w.cols() + self.n_units
    }
}

/// The single output unit; its weight vector spans the outputs of all
/// connected blocks in connection order.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputUnit {
    pub connected: Vec<BlockId>,
    pub w: Vec<f64>,
    pub b: f64,
    pub activation: Activation,
    pub trainable: bool,
}

impl OutputUnit {
    pub fn param_count(&self) -> usize {
        self.w.len() + 1
    }
}

/// Which parameters a trainability change applies to.
#[derive(Debug, Clone)]
pub enum TrainableSelector {
    All,
    Blocks(Vec<BlockId>),
    /// Leaves exactly the most recently added block and the output unit with
    /// the given flag; every other block gets the opposite.
    NewAndOutput,
}

/// Per-block forward trace used by backpropagation.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub blocks: Vec<Option<BlockTrace>>,
    pub output_input: Vec<f64>,
    pub output_pre: f64,
    pub prediction: f64,
}

/// Dynamic feed-forward network with a growable hidden topology.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    input_width: usize,
    blocks: Vec<UnitBlock>,
    output: Option<OutputUnit>,
    /// Blocks whose activations a headless network exposes, recorded when the
    /// output unit is removed.
    exposed: Option<Vec<BlockId>>,
    next_block_id: BlockId,
}

impl NetworkGraph {
    /// Bare network with no blocks and no output unit.
    pub fn empty(input_width: usize) -> Result<Self> {
        if input_width == 0 {
            return Err(Error::InvalidArgument("input_width must be >= 1".into()));
        }
        Ok(NetworkGraph {
            input_width,
            blocks: Vec::new(),
            output: None,
            exposed: None,
            next_block_id: 0,
        })
    }

    /// Fully connected feed-forward chain, deterministic for a fixed seed.
    pub fn new_network(
        input_width: usize,
        layer_widths: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        init: InitPolicy,
        seed: u64,
    ) -> Result<Self> {
        if layer_widths.is_empty() || layer_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "layer widths must be non-empty and >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = NetworkGraph::empty(input_width)?;
        let mut prev: Option<BlockId> = None;
        for &width in layer_widths {
            let sources = match prev {
                None => (0..input_width).map(SourceRef::Input).collect(),
                Some(id) => vec![SourceRef::Block(id)],
            };
            let id = net.push_block(width, sources, hidden_activation, init, &mut rng)?;
            prev = Some(id);
        }
        let last = prev.expect("at least one layer");
        net.attach_output_unit(output_activation)?;
        net.connect_block_to_output(last, init, &mut rng)?;
        Ok(net)
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn blocks(&self) -> &[UnitBlock] {
        &self.blocks
    }

    pub fn output_unit(&self) -> Option<&OutputUnit> {
        self.output.as_ref()
    }

    pub fn output_unit_mut(&mut self) -> Option<&mut OutputUnit> {
        self.output.as_mut()
    }

    pub fn last_block_id(&self) -> Option<BlockId> {
        self.blocks.last().map(|b| b.id)
    }

    pub fn block(&self, id: BlockId) -> Result<&UnitBlock> {
        self.blocks
            .iter()
            .find(|b| b.id == id)
            .ok_or(Error::UnknownBlock(id))
    }

    pub fn block_mut(&mut self, id: BlockId) -> Result<&mut UnitBlock> {
        self.blocks
            .iter_mut()
            .find(|b| b.id == id)
            .ok_or(Error::UnknownBlock(id))
    }

    fn block_index(&self, id: BlockId) -> Result<usize> {
        self.blocks
            .iter()
            .position(|b| b.id == id)
            .ok_or(Error::UnknownBlock(id))
    }

    /// Total width of a source list; validates that every reference exists
    /// and points at the input layer or an earlier block.
    pub fn source_width(&self, sources: &[SourceRef]) -> Result<usize> {
        if sources.is_empty() {
            return Err(Error::InvalidArgument("block needs at least one source".into()));
        }
        let mut width = 0;
        for s in sources {
            match *s {
                SourceRef::Input(slot) => {
                    if slot >= self.input_width {
                        return Err(Error::InvalidArgument(format!(
                            "input slot {slot} out of range (input width {})",
                            self.input_width
                        )));
                    }
                    width += 1;
                }
                SourceRef::Block(id) => width += self.block(id)?.n_units,
            }
        }
        Ok(width)
    }

    fn push_block(
        &mut self,
        n_units: usize,
        sources: Vec<SourceRef>,
        activation: Activation,
        init: InitPolicy,
        rng: &mut impl Rng,
    ) -> Result<BlockId> {
        if n_units == 0 {
            return Err(Error::InvalidArgument("block must have >= 1 unit".into()));
        }
        let fan_in = self.source_width(&sources)?;
        let w = Matrix::from_fn(n_units, fan_in, |_, _| init.sample(rng, fan_in, n_units));
        let id = self.next_block_id;
        self.next_block_id += 1;
        self.blocks.push(UnitBlock {
            id,
            n_units,
            sources,
            w,
            // biases are always zero at creation
            b: vec![0.0; n_units],
            activation,
            trainable: true,
        });
        Ok(id)
    }

    fn connect_block_to_output(
        &mut self,
        id: BlockId,
        init: InitPolicy,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let n_units = self.block(id)?.n_units;
        let out = self.output.as_mut().ok_or(Error::NoOutputUnit)?;
        if out.connected.contains(&id) {
            return Err(Error::InvalidArgument(format!(
                "block {id} is already connected to the output unit"
            )));
        }
        let fan_in = out.w.len() + n_units;
        for _ in 0..n_units {
            out.w.push(init.sample(rng, fan_in, 1));
        }
        out.connected.push(id);
        Ok(())
    }

    /// Appends a new unit block and connects it to the output unit.
    ///
    /// Hidden weights come from `hidden_init` (biases zero); the new output
    /// connections come from `output_init` — zeros by default so the
    /// extension leaves predictions untouched. Pre-existing parameters are
    /// never modified.
    pub fn add_unit_block(
        &mut self,
        n_units: usize,
        sources: Vec<SourceRef>,
        activation: Activation,
        hidden_init: InitPolicy,
        output_init: InitPolicy,
        rng: &mut impl Rng,
    ) -> Result<BlockId> {
        if self.output.is_none() {
            return Err(Error::NoOutputUnit);
        }
        let id = self.push_block(n_units, sources, activation, hidden_init, rng)?;
        self.connect_block_to_output(id, output_init, rng)?;
        Ok(id)
    }

    /// Single scalar prediction for one input row.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_trace(x)?.prediction)
    }

    /// Forward pass retaining per-block inputs and pre-activations.
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        let out = self.output.as_ref().ok_or(Error::NoOutputUnit)?;
        let block_outs = self.eval_blocks(x)?;
        let mut traces = Vec::with_capacity(self.blocks.len());
        for (block, (input, pre, outv)) in self.blocks.iter().zip(&block_outs) {
            let _ = block;
            traces.push(Some(BlockTrace {
                input: input.clone(),
                pre: pre.clone(),
                out: outv.clone(),
            }));
        }
        let output_input = self.gather_output_input(&block_outs)?;
        let mut pre = out.b;
        for (wv, iv) in out.w.iter().zip(&output_input) {
            pre += wv * iv;
        }
        let prediction = out.activation.apply_scalar(pre);
        Ok(ForwardTrace {
            blocks: traces,
            output_input,
            output_pre: pre,
            prediction,
        })
    }

    /// Outputs of a headless network: the activations of the blocks that fed
    /// the removed output unit, concatenated in connection order.
    pub fn forward_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.output.is_some() {
            return Err(Error::InvalidArgument(
                "forward_features requires a headless network".into(),
            ));
        }
        let exposed = self.exposed.as_ref().ok_or(Error::NoOutputUnit)?;
        let block_outs = self.eval_blocks(x)?;
        let mut features = Vec::new();
        for &id in exposed {
            let idx = self.block_index(id)?;
            features.extend_from_slice(&block_outs[idx].2);
        }
        Ok(features)
    }

    /// Width of the feature vector a headless network emits.
    pub fn exposed_width(&self) -> Result<usize> {
        let exposed = self.exposed.as_ref().ok_or(Error::NoOutputUnit)?;
        let mut w = 0;
        for &id in exposed {
            w += self.block(id)?.n_units;
        }
        Ok(w)
    }

    /// Per-block (input, pre-activation, output) without touching the output
    /// unit; legal on headless networks. Used by the training cache.
    pub(crate) fn forward_trace_blocks_only(
        &self,
        x: &[f64],
    ) -> Result<Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>> {
        self.eval_blocks(x)
    }

    fn eval_blocks(&self, x: &[f64]) -> Result<Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>> {
        if x.len() != self.input_width {
            return Err(Error::dim(
                "forward input",
                self.input_width.to_string(),
                x.len().to_string(),
            ));
        }
        let mut outs: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.blocks.len());
        for (idx, block) in self.blocks.iter().enumerate() {
            let mut input = Vec::with_capacity(block.w.cols());
            for s in &block.sources {
                match *s {
                    SourceRef::Input(slot) => input.push(x[slot]),
                    SourceRef::Block(id) => {
                        let sidx = self.block_index(id)?;
                        // topological soundness: sources precede the block
                        debug_assert!(sidx < idx);
                        input.extend_from_slice(&outs[sidx].2);
                    }
                }
            }
            let pre = affine_forward(&block.w, &block.b, &input)?;
            let out = block.activation.apply(&pre);
            outs.push((input, pre, out));
        }
        Ok(outs)
    }

    fn gather_output_input(
        &self,
        block_outs: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
    ) -> Result<Vec<f64>> {
        let out = self.output.as_ref().ok_or(Error::NoOutputUnit)?;
        let mut input = Vec::with_capacity(out.w.len());
        for &id in &out.connected {
            let idx = self.block_index(id)?;
            input.extend_from_slice(&block_outs[idx].2);
        }
        if input.len() != out.w.len() {
            return Err(Error::dim(
                "output unit input",
                out.w.len().to_string(),
                input.len().to_string(),
            ));
        }
        Ok(input)
    }

    pub fn set_trainable(&mut self, selector: TrainableSelector, flag: bool) -> Result<()> {
        match selector {
            TrainableSelector::All => {
                for b in &mut self.blocks {
                    b.trainable = flag;
                }
                if let Some(out) = self.output.as_mut() {
                    out.trainable = flag;
                }
            }
            TrainableSelector::Blocks(ids) => {
                for id in ids {
                    self.block_mut(id)?.trainable = flag;
                }
            }
            TrainableSelector::NewAndOutput => {
                let last = self
                    .blocks
                    .last()
                    .map(|b| b.id)
                    .ok_or_else(|| Error::InvalidArgument("network has no blocks".into()))?;
                for b in &mut self.blocks {
                    b.trainable = if b.id == last { flag } else { !flag };
                }
                self.output
                    .as_mut()
                    .ok_or(Error::NoOutputUnit)?
                    .trainable = flag;
            }
        }
        Ok(())
    }

    /// Detaches the output unit; the network then exposes the activations of
    /// the blocks that fed it as its outputs (the transformed features).
    pub fn remove_output_unit(&mut self) -> Result<OutputUnit> {
        let out = self.output.take().ok_or(Error::NoOutputUnit)?;
        self.exposed = Some(out.connected.clone());
        Ok(out)
    }

    /// Installs a fresh output unit with no connections yet.
    pub fn attach_output_unit(&mut self, activation: Activation) -> Result<()> {
        if self.output.is_some() {
            return Err(Error::OutputUnitPresent);
        }
        self.output = Some(OutputUnit {
            connected: Vec::new(),
            w: Vec::new(),
            b: 0.0,
            activation,
            trainable: true,
        });
        self.exposed = None;
        Ok(())
    }

    pub fn total_param_count(&self) -> usize {
        let blocks: usize = self.blocks.iter().map(|b| b.param_count()).sum();
        blocks + self.output.as_ref().map_or(0, |o| o.param_count())
    }

    pub fn trainable_param_count(&self) -> usize {
        let blocks: usize = self
            .blocks
            .iter()
            .filter(|b| b.trainable)
            .map(|b| b.param_count())
            .sum();
        blocks
            + self
                .output
                .as_ref()
                .filter(|o| o.trainable)
                .map_or(0, |o| o.param_count())
    }

    /// All parameters flattened in a fixed order: per block W row-major then
    /// biases, then the output unit's weights and bias.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.total_param_count());
        for b in &self.blocks {
            v.extend_from_slice(b.w.data());
            v.extend_from_slice(&b.b);
        }
        if let Some(out) = &self.output {
            v.extend_from_slice(&out.w);
            v.push(out.b);
        }
        v
    }

    pub fn set_param_vector(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.total_param_count() {
            return Err(Error::dim(
                "set_param_vector",
                self.total_param_count().to_string(),
                params.len().to_string(),
            ));
        }
        let mut i = 0;
        for b in &mut self.blocks {
            let wn = b.w.data().len();
            b.w.data_mut().copy_from_slice(&params[i..i + wn]);
            i += wn;
            b.b.copy_from_slice(&params[i..i + b.n_units]);
            i += b.n_units;
        }
        if let Some(out) = self.output.as_mut() {
            let wn = out.w.len();
            out.w.copy_from_slice(&params[i..i + wn]);
            i += wn;
            out.b = params[i];
        }
        Ok(())
    }

    pub fn save_model(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelFile::from_net(self);
        let json = serde_json::to_string_pretty(&file)?;
        fs::write(path.as_ref(), json)
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
    }

    pub fn load_model(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        file.into_net()
    }
}

fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f64s(text: &str, expected: usize, context: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Format(format!("bad base64 in {context}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format(format!(
            "{context}: expected {expected} f64 values, got {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct BlockFile {
    id: BlockId,
    n_units: usize,
    sources: Vec<SourceRef>,
    activation: Activation,
    trainable: bool,
    w: String,
    b: String,
}

#[derive(Serialize, Deserialize)]
struct OutputFile {
    connected: Vec<BlockId>,
    activation: Activation,
    trainable: bool,
    w: String,
    b: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    input_width: usize,
    next_block_id: BlockId,
    blocks: Vec<BlockFile>,
    output: Option<OutputFile>,
    exposed: Option<Vec<BlockId>>,
}

impl ModelFile {
    fn from_net(net: &NetworkGraph) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            input_width: net.input_width,
            next_block_id: net.next_block_id,
            blocks: net
                .blocks
                .iter()
                .map(|b| BlockFile {
                    id: b.id,
                    n_units: b.n_units,
                    sources: b.sources.clone(),
                    activation: b.activation,
                    trainable: b.trainable,
                    w: encode_f64s(b.w.data()),
                    b: encode_f64s(&b.b),
                })
                .collect(),
            output: net.output.as_ref().map(|o| OutputFile {
                connected: o.connected.clone(),
                activation: o.activation,
                trainable: o.trainable,
                w: encode_f64s(&o.w),
                b: encode_f64s(&[o.b]),
            }),
            exposed: net.exposed.clone(),
        }
    }

    fn into_net(self) -> Result<NetworkGraph> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Format(format!(
                "not a {MODEL_FORMAT} model file (format field is {:?})",
                self.format
            )));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                self.version
            )));
        }
        let mut net = NetworkGraph::empty(self.input_width)?;
        net.next_block_id = self.next_block_id;
        for bf in self.blocks {
            // reconstruct and re-validate topology block by block
            let fan_in = net.source_width(&bf.sources)?;
            let w = Matrix::new(
                bf.n_units,
                fan_in,
                decode_f64s(&bf.w, bf.n_units * fan_in, "block weights")?,
            )?;
            let b = decode_f64s(&bf.b, bf.n_units, "block biases")?;
            net.blocks.push(UnitBlock {
                id: bf.id,
                n_units: bf.n_units,
                sources: bf.sources,
                w,
                b,
                activation: bf.activation,
                trainable: bf.trainable,
            });
        }
        if let Some(of) = self.output {
            let mut width = 0;
            for &id in &of.connected {
                width += net.block(id)?.n_units;
            }
            let w = decode_f64s(&of.w, width, "output weights")?;
            let b = decode_f64s(&of.b, 1, "output bias")?[0];
            net.output = Some(OutputUnit {
                connected: of.connected,
                w,
                b,
                activation: of.activation,
                trainable: of.trainable,
            });
        }
        net.exposed = self.exposed;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Activation::{Identity, Relu, Sigmoid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_inputs(width: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| (0..width).map(|_| r.gen_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn published_initial_topology_param_count() {
        let net = NetworkGraph::new_network(
            29,
            &[500, 10],
            Relu,
            Sigmoid,
            InitPolicy::GaussianStd(0.01),
            7,
        )
        .unwrap();
        let expected = 29 * 500 + 500 + 500 * 10 + 10 + 10 + 1;
        assert_eq!(net.total_param_count(), expected);
    }

    #[test]
    fn zeros_init_gives_constant_output() {
        let net =
            NetworkGraph::new_network(2, &[1], Identity, Identity, InitPolicy::Zeros, 0).unwrap();
        for x in random_inputs(2, 20, 3) {
            assert_eq!(net.forward(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = NetworkGraph::new_network(5, &[4, 3], Relu, Sigmoid, InitPolicy::Xavier, 42).unwrap();
        let b = NetworkGraph::new_network(5, &[4, 3], Relu, Sigmoid, InitPolicy::Xavier, 42).unwrap();
        assert_eq!(a.param_vector(), b.param_vector());
    }

    #[test]
    fn zero_width_rejected() {
        assert!(NetworkGraph::new_network(3, &[2, 0], Relu, Sigmoid, InitPolicy::Zeros, 0).is_err());
        assert!(NetworkGraph::empty(0).is_err());
    }

    #[test]
    fn forward_hand_arithmetic() {
        let mut net = NetworkGraph::empty(2).unwrap();
        let mut r = rng(0);
        let id = net
            .push_block(
                1,
                vec![SourceRef::Input(0), SourceRef::Input(1)],
                Relu,
                InitPolicy::Zeros,
                &mut r,
            )
            .unwrap();
        net.block_mut(id).unwrap().w.data_mut().copy_from_slice(&[1.0, 1.0]);
        net.attach_output_unit(Identity).unwrap();
        net.connect_block_to_output(id, InitPolicy::Zeros, &mut r).unwrap();
        let out = net.output_unit_mut().unwrap();
        out.w[0] = 2.0;
        out.b = 1.0;
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), 7.0);
    }

    #[test]
    fn all_zero_weights_sigmoid_predicts_half() {
        let net = NetworkGraph::new_network(4, &[3], Relu, Sigmoid, InitPolicy::Zeros, 0).unwrap();
        for x in random_inputs(4, 10, 9) {
            assert_eq!(net.forward(&x).unwrap(), 0.5);
        }
    }

    #[test]
    fn zero_extension_leaves_predictions_unchanged() {
        let mut net =
            NetworkGraph::new_network(3, &[4, 2], Relu, Sigmoid, InitPolicy::GaussianStd(0.5), 11)
                .unwrap();
        let inputs = random_inputs(3, 100, 5);
        let before: Vec<f64> = inputs.iter().map(|x| net.forward(x).unwrap()).collect();
        let mut r = rng(1);
        net.add_unit_block(
            1,
            (0..3).map(SourceRef::Input).collect(),
            Relu,
            InitPolicy::GaussianStd(0.01),
            InitPolicy::Zeros,
            &mut r,
        )
        .unwrap();
        for (x, b) in inputs.iter().zip(&before) {
            assert_eq!(net.forward(x).unwrap(), *b);
        }
    }

    #[test]
    fn add_two_units_parameter_accounting() {
        let mut net =
            NetworkGraph::new_network(6, &[3], Relu, Sigmoid, InitPolicy::GaussianStd(0.01), 2)
                .unwrap();
        let before = net.total_param_count();
        let mut r = rng(2);
        net.add_unit_block(
            2,
            (0..6).map(SourceRef::Input).collect(),
            Relu,
            InitPolicy::GaussianStd(0.01),
            InitPolicy::Zeros,
            &mut r,
        )
        .unwrap();
        // 2 units x 6 sources + 2 biases + 2 output connections
        assert_eq!(net.total_param_count(), before + 2 * 6 + 2 + 2);
    }

    #[test]
    fn gaussian_sampler_standard_deviation() {
        let mut net = NetworkGraph::empty(100).unwrap();
        let mut r = rng(77);
        net.push_block(
            100,
            (0..100).map(SourceRef::Input).collect(),
            Relu,
            InitPolicy::GaussianStd(0.01),
            &mut r,
        )
        .unwrap();
        let weights = net.blocks()[0].w.data();
        assert_eq!(weights.len(), 10_000);
        let mean: f64 = weights.iter().sum::<f64>() / weights.len() as f64;
        let var: f64 =
            weights.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / weights.len() as f64;
        let sd = var.sqrt();
        assert!((0.008..=0.012).contains(&sd), "sample sd {sd}");
    }

    #[test]
    fn dangling_source_rejected() {
        let mut net = NetworkGraph::new_network(2, &[2], Relu, Sigmoid, InitPolicy::Zeros, 0).unwrap();
        let mut r = rng(0);
        let err = net.add_unit_block(
            1,
            vec![SourceRef::Block(99)],
            Relu,
            InitPolicy::Zeros,
            InitPolicy::Zeros,
            &mut r,
        );
        assert!(matches!(err, Err(Error::UnknownBlock(99))));
        let err = net.add_unit_block(
            1,
            vec![SourceRef::Input(5)],
            Relu,
            InitPolicy::Zeros,
            InitPolicy::Zeros,
            &mut r,
        );
        assert!(err.is_err());
    }

    #[test]
    fn new_and_output_selector() {
        let mut net =
            NetworkGraph::new_network(3, &[2, 2], Relu, Sigmoid, InitPolicy::GaussianStd(0.01), 3)
                .unwrap();
        let mut r = rng(3);
        let new_id = net
            .add_unit_block(
                1,
                (0..3).map(SourceRef::Input).collect(),
                Relu,
                InitPolicy::GaussianStd(0.01),
                InitPolicy::Zeros,
                &mut r,
            )
            .unwrap();
        net.set_trainable(TrainableSelector::NewAndOutput, true).unwrap();
        for b in net.blocks() {
            assert_eq!(b.trainable, b.id == new_id);
        }
        assert!(net.output_unit().unwrap().trainable);
    }

    #[test]
    fn unknown_block_in_selector() {
        let mut net = NetworkGraph::new_network(2, &[2], Relu, Sigmoid, InitPolicy::Zeros, 0).unwrap();
        assert!(matches!(
            net.set_trainable(TrainableSelector::Blocks(vec![42]), false),
            Err(Error::UnknownBlock(42))
        ));
    }

    #[test]
    fn headless_network_emits_last_layer() {
        let mut net =
            NetworkGraph::new_network(7, &[5, 3], Relu, Sigmoid, InitPolicy::GaussianStd(0.3), 13)
                .unwrap();
        let x: Vec<f64> = (0..7).map(|i| i as f64 * 0.25 - 1.0).collect();
        let trace = net.forward_trace(&x).unwrap();
        let last_out = trace.blocks.last().unwrap().as_ref().unwrap().out.clone();
        net.remove_output_unit().unwrap();
        let features = net.forward_features(&x).unwrap();
        assert_eq!(features.len(), 3);
        assert_eq!(features, last_out);
        assert_eq!(net.exposed_width().unwrap(), 3);
    }

    #[test]
    fn remove_output_twice_is_error() {
        let mut net = NetworkGraph::new_network(2, &[2], Relu, Sigmoid, InitPolicy::Zeros, 0).unwrap();
        net.remove_output_unit().unwrap();
        assert!(matches!(net.remove_output_unit(), Err(Error::NoOutputUnit)));
        assert!(matches!(net.forward(&[0.0, 0.0]), Err(Error::NoOutputUnit)));
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cnet.json");
        let mut net =
            NetworkGraph::new_network(4, &[3, 2], Relu, Sigmoid, InitPolicy::GaussianStd(0.7), 21)
                .unwrap();
        let mut r = rng(4);
        net.add_unit_block(
            2,
            (0..4).map(SourceRef::Input).collect(),
            Activation::Tanh,
            InitPolicy::Xavier,
            InitPolicy::Zeros,
            &mut r,
        )
        .unwrap();
        net.set_trainable(TrainableSelector::NewAndOutput, true).unwrap();
        net.save_model(&path).unwrap();
        let loaded = NetworkGraph::load_model(&path).unwrap();
        assert_eq!(net, loaded);
        let flags: Vec<bool> = loaded.blocks().iter().map(|b| b.trainable).collect();
        assert_eq!(flags, vec![false, false, true]);
        for x in random_inputs(4, 100, 6) {
            assert_eq!(net.forward(&x).unwrap(), loaded.forward(&x).unwrap());
        }
    }

    #[test]
    fn corrupt_magic_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cnet.json");
        let net = NetworkGraph::new_network(2, &[2], Relu, Sigmoid, InitPolicy::Zeros, 0).unwrap();
        net.save_model(&path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"cnet\"", "\"nope\"");
        std::fs::write(&path, text).unwrap();
        let err = NetworkGraph::load_model(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "got {err:?}");

        let net2 = NetworkGraph::new_network(2, &[2], Relu, Sigmoid, InitPolicy::Zeros, 0).unwrap();
        net2.save_model(&path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        std::fs::write(&path, text).unwrap();
        let err = NetworkGraph::load_model(&path).unwrap_err();
        assert!(err.to_string().contains("expected 1"), "got {err}");
    }

    #[test]
    fn forward_matches_naive_recursive_evaluator() {
        // Independent oracle: recursive evaluation with hand-coded math.
        fn naive_block(net: &NetworkGraph, id: BlockId, x: &[f64]) -> Vec<f64> {
            let block = net.block(id).unwrap();
            let mut input = Vec::new();
            for s in &block.sources {
                match *s {
                    SourceRef::Input(slot) => input.push(x[slot]),
                    SourceRef::Block(b) => input.extend(naive_block(net, b, x)),
                }
            }
            (0..block.n_units)
                .map(|u| {
                    let mut z = block.b[u];
                    for (c, iv) in input.iter().enumerate() {
                        z += block.w.get(u, c) * iv;
                    }
                    match block.activation {
                        Activation::Relu => z.max(0.0),
                        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                        Activation::Tanh => z.tanh(),
                        Activation::Identity => z,
                    }
                })
                .collect()
        }

        let mut net =
            NetworkGraph::new_network(5, &[4, 3], Relu, Sigmoid, InitPolicy::GaussianStd(0.6), 31)
                .unwrap();
        let mut r = rng(8);
        net.add_unit_block(
            2,
            vec![
                SourceRef::Input(0),
                SourceRef::Input(2),
                SourceRef::Block(1),
            ],
            Activation::Tanh,
            InitPolicy::Xavier,
            InitPolicy::Xavier,
            &mut r,
        )
        .unwrap();

        for x in random_inputs(5, 1000, 17) {
            let out = net.output_unit().unwrap();
            let mut input = Vec::new();
            for &id in &out.connected {
                input.extend(naive_block(&net, id, &x));
            }
            let mut pre = out.b;
            for (w, i) in out.w.iter().zip(&input) {
                pre += w * i;
            }
            let expected = 1.0 / (1.0 + (-pre).exp());
            let got = net.forward(&x).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn zero_extension_invariance_property(
            seed in 0u64..1000,
            input_width in 1usize..6,
            units in 1usize..4,
        ) {
            let mut net = NetworkGraph::new_network(
                input_width,
                &[2, 3],
                Relu,
                Sigmoid,
                InitPolicy::GaussianStd(0.5),
                seed,
            ).unwrap();
            let inputs = random_inputs(input_width, 20, seed ^ 0xabc);
            let before: Vec<f64> = inputs.iter().map(|x| net.forward(x).unwrap()).collect();
            let mut r = rng(seed ^ 0xdef);
            net.add_unit_block(
                units,
                (0..input_width).map(SourceRef::Input).collect(),
                Relu,
                InitPolicy::GaussianStd(0.01),
                InitPolicy::Zeros,
                &mut r,
            ).unwrap();
            for (x, b) in inputs.iter().zip(&before) {
                prop_assert_eq!(net.forward(x).unwrap(), *b);
            }
        }
    }
}
