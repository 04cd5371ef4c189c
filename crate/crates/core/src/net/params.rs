use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// What each neighbor contributes to the key/value embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NeighborFeatures {
    /// `(dx, dy, distance)` of landmark relative to measurement.
    #[default]
    Offset,
    /// Euclidean distance only.
    DistanceOnly,
}

impl NeighborFeatures {
    pub fn width(self) -> usize {
        match self {
            NeighborFeatures::Offset => 3,
            NeighborFeatures::DistanceOnly => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Embedding width `d_m`.
    pub d_model: usize,
    pub heads: usize,
    /// Landmarks associated per measurement.
    pub k: usize,
    /// Hidden width of the measurement and neighbor embedding rFFs.
    pub embed_hidden: usize,
    /// Hidden width of the rFF inside each attention block.
    pub block_hidden: usize,
    /// Hidden widths of the pose output head.
    pub head_hidden: Vec<usize>,
    pub neighbor_features: NeighborFeatures,
    /// Coordinates are multiplied by this before entering the network.
    pub input_scale: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl NetConfig {
    /// Full-width configuration (`d_m = 256`).
    pub fn full() -> Self {
        Self {
            d_model: 256,
            heads: 4,
            k: 8,
            embed_hidden: 128,
            block_hidden: 512,
            head_hidden: vec![128, 64],
            neighbor_features: NeighborFeatures::Offset,
            input_scale: 0.1,
            seed: 0,
        }
    }

    /// Desk-scale profile used by tests and examples.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            embed_hidden: 64,
            block_hidden: 128,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model < self.heads || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.d_model < 2 {
            return Err(Error::Config("d_model must be at least 2".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.embed_hidden == 0 || self.block_hidden == 0 || self.head_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::Config("input_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Index of an affine layer's weight and bias in [`ModelParams`].
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub weight: usize,
    pub bias: usize,
}

/// Row-wise feed-forward net: affine layers with relu between them.
#[derive(Debug, Clone)]
pub struct RowFf {
    pub layers: Vec<Affine>,
}

#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub query: Vec<usize>,
    pub key: Vec<usize>,
    pub value: Vec<usize>,
    pub output: usize,
    pub norm1: (usize, usize),
    pub ff: RowFf,
    pub norm2: (usize, usize),
}

/// Where every named array lives, derived from a [`NetConfig`].
#[derive(Debug, Clone)]
pub struct Layout {
    pub measurement_embed: RowFf,
    pub neighbor_embed: RowFf,
    pub local: BlockLayout,
    pub global: BlockLayout,
    pub head: RowFf,
    pub s_tran: usize,
    pub s_rot: usize,
}

/// How an array is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Glorot,
    Zeros,
    Ones,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<(String, (usize, usize), Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn row_ff(&mut self, prefix: &str, widths: &[usize]) -> RowFf {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Affine {
                weight: self.add(format!("{prefix}.{i}.weight"), (w[0], w[1]), Init::Glorot),
                bias: self.add(format!("{prefix}.{i}.bias"), (1, w[1]), Init::Zeros),
            })
            .collect();
        RowFf { layers }
    }

    fn block(&mut self, prefix: &str, cfg: &NetConfig) -> BlockLayout {
        let (d, dh) = (cfg.d_model, cfg.head_width());
        let mut proj = |name: &str| -> Vec<usize> {
            (0..cfg.heads)
                .map(|h| self.add(format!("{prefix}.{name}.{h}"), (d, dh), Init::Glorot))
                .collect()
        };
        let query = proj("w_query");
        let key = proj("w_key");
        let value = proj("w_value");
        let output = self.add(format!("{prefix}.w_out"), (d, d), Init::Glorot);
        let norm1 = (
            self.add(format!("{prefix}.norm1.gamma"), (1, d), Init::Ones),
            self.add(format!("{prefix}.norm1.beta"), (1, d), Init::Zeros),
        );
        let ff = self.row_ff(&format!("{prefix}.ff"), &[d, cfg.block_hidden, d]);
        let norm2 = (
            self.add(format!("{prefix}.norm2.gamma"), (1, d), Init::Ones),
            self.add(format!("{prefix}.norm2.beta"), (1, d), Init::Zeros),
        );
        BlockLayout {
            query,
            key,
            value,
            output,
            norm1,
            ff,
            norm2,
        }
    }
}

fn build_layout(cfg: &NetConfig) -> (Layout, Vec<(String, (usize, usize), Init)>) {
    let mut b = LayoutBuilder::default();
    let d = cfg.d_model;
    let measurement_embed = b.row_ff("embed.measurement", &[2, cfg.embed_hidden, d]);
    let neighbor_embed = b.row_ff("embed.neighbor", &[cfg.neighbor_features.width(), cfg.embed_hidden, d]);
    let local = b.block("local", cfg);
    let global = b.block("global", cfg);
    let mut head_widths = vec![d];
    head_widths.extend(&cfg.head_hidden);
    head_widths.push(3);
    let head = b.row_ff("head", &head_widths);
    let s_tran = b.add("s_tran".into(), (1, 1), Init::Zeros);
    let s_rot = b.add("s_rot".into(), (1, 1), Init::Zeros);
    (
        Layout {
            measurement_embed,
            neighbor_embed,
            local,
            global,
            head,
            s_tran,
            s_rot,
        },
        b.specs,
    )
}

impl Layout {
    pub fn new(cfg: &NetConfig) -> Self {
        build_layout(cfg).0
    }
}

/// Every learnable array of the network plus the loss weights `s_tran`, `s_rot`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    arrays: Vec<Tensor>,
}

impl ModelParams {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Tensor] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Tensor] {
        &mut self.arrays
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.arrays[i])
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.arrays.iter().map(Tensor::len).sum()
    }

    pub fn s_tran(&self, layout: &Layout) -> f64 {
        self.arrays[layout.s_tran].item()
    }

    pub fn s_rot(&self, layout: &Layout) -> f64 {
        self.arrays[layout.s_rot].item()
    }

    /// Expected `(name, shape)` list for `cfg`, in storage order.
    pub fn expected_shapes(cfg: &NetConfig) -> Vec<(String, (usize, usize))> {
        build_layout(cfg).1.into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    /// Assembles parameters from named arrays, validating every shape against `cfg`.
    pub fn from_named(cfg: &NetConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        cfg.validate()?;
        let expected = Self::expected_shapes(cfg);
        let mut arrays = Vec::with_capacity(expected.len());
        let mut names = Vec::with_capacity(expected.len());
        let mut pool = named;
        for (name, shape) in expected {
            let pos = pool
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::Config(format!("missing array `{name}`")))?;
            let (_, t) = pool.swap_remove(pos);
            if t.shape() != shape {
                return Err(Error::ArrayShape {
                    name,
                    found: t.shape(),
                    expected: shape,
                });
            }
            names.push(name);
            arrays.push(t);
        }
        if let Some((extra, _)) = pool.first() {
            return Err(Error::Config(format!("unexpected array `{extra}`")));
        }
        Ok(Self { names, arrays })
    }
}

/// Glorot-uniform weights, zero biases, unit layer-norm gains, `s_tran = s_rot = 0`.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, specs) = build_layout(cfg);
    let mut names = Vec::with_capacity(specs.len());
    let mut arrays = Vec::with_capacity(specs.len());
    for (name, (r, c), init) in specs {
        let t = match init {
            Init::Zeros => Tensor::zeros(r, c),
            Init::Ones => Tensor::filled(r, c, 1.0),
            Init::Glorot => {
                let limit = (6.0 / (r + c) as f64).sqrt();
                let data = (0..r * c).map(|_| rng.gen_range(-limit..limit)).collect();
                Tensor::from_vec_unchecked(r, c, data)
            }
        };
        names.push(name);
        arrays.push(t);
    }
    Ok(ModelParams { names, arrays })
}
