//! Input-convex neural surrogate for the entropy functional.
//!
//! The network maps reduced normalized moments to a scalar entropy value and
//! is convex in its input by construction: inter-layer weights `W^z` are
//! kept non-negative (the first layer has none) and the hidden activation is
//! the convex, non-decreasing softplus. The architecture is a block of
//! `width x depth` convex layers, a bridge layer of half width, and a linear
//! scalar output layer.
//!
//! Inference recovers the full closure data from one forward and one
//! reverse pass: the input gradient gives the reduced multipliers, the
//! unit-mass identity supplies `alpha_0`, and quadrature of the
//! reconstructed density gives the moment reconstruction. The zero moment of
//! that reconstruction is one by construction, independent of training
//! quality.

mod train;

pub use train::{
    loss_batch, train, AlphaLossMode, LossBreakdown, TrainConfig, TrainHistory,
};

use crate::entropy::{alpha_zero_from_reduced, reconstruct_density};
use crate::error::{Error, Result};
use crate::moments::{LagrangeMultipliers, MomentVector};
use crate::velocity::{moments_of, MomentBasis, QuadratureRule};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{BufRead, BufWriter, Write as IoWrite};
use std::path::Path;

/// Width and depth of the convex block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub width: usize,
    pub depth: usize,
}

impl Layout {
    pub fn new(width: usize, depth: usize) -> Result<Self> {
        if width == 0 || depth == 0 {
            return Err(Error::Config("layout needs positive width and depth".into()));
        }
        Ok(Layout { width, depth })
    }

    /// Output widths of all layers: the block, the half-width bridge, and
    /// the scalar output.
    fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.width; self.depth];
        dims.push((self.width / 2).max(1));
        dims.push(1);
        dims
    }
}

impl std::str::FromStr for Layout {
    type Err = Error;
    /// Parses the `WIDTHxDEPTH` form, e.g. `10x7`.
    fn from_str(s: &str) -> Result<Self> {
        let (w, d) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("layout must look like 10x7, got {s}")))?;
        let width = w
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad layout width {w}")))?;
        let depth = d
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad layout depth {d}")))?;
        Layout::new(width, depth)
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.depth)
    }
}

/// Index ranges of one layer's tensors inside the flat parameter vector.
#[derive(Clone, Debug)]
pub(crate) struct LayerShape {
    pub(crate) out_dim: usize,
    pub(crate) in_z: usize,
    pub(crate) wx: std::ops::Range<usize>,
    /// Absent in the first layer.
    pub(crate) wz: Option<std::ops::Range<usize>>,
    pub(crate) b: std::ops::Range<usize>,
}

/// Training provenance stored with the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelMeta {
    pub epochs: usize,
    pub seed: u64,
    pub dataset_hash: Option<String>,
    /// Final (h, alpha, u) training losses.
    pub final_train: Option<[f64; 3]>,
    pub final_val: Option<[f64; 3]>,
}

/// The surrogate model: layout, flat parameters, and provenance.
#[derive(Clone, Debug)]
pub struct IcnnModel {
    input_dim: usize,
    layout: Layout,
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
    pub meta: ModelMeta,
}

fn build_shapes(input_dim: usize, layout: Layout) -> (Vec<LayerShape>, usize) {
    let dims = layout.dims();
    let mut shapes = Vec::with_capacity(dims.len());
    let mut offset = 0;
    let mut prev = 0;
    for (k, &out) in dims.iter().enumerate() {
        let wx = offset..offset + out * input_dim;
        offset = wx.end;
        let wz = if k == 0 {
            None
        } else {
            let r = offset..offset + out * prev;
            offset = r.end;
            Some(r)
        };
        let b = offset..offset + out;
        offset = b.end;
        shapes.push(LayerShape {
            out_dim: out,
            in_z: prev,
            wx,
            wz,
            b,
        });
        prev = out;
    }
    (shapes, offset)
}

impl IcnnModel {
    /// Fresh model with Glorot-uniform `W^x`, small non-negative `W^z`, and
    /// zero biases.
    pub fn init(input_dim: usize, layout: Layout, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let (shapes, count) = build_shapes(input_dim, layout);
        let mut params = vec![0.0; count];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for shape in &shapes {
            let limit = (6.0 / (input_dim + shape.out_dim) as f64).sqrt();
            for p in &mut params[shape.wx.clone()] {
                *p = rng.gen_range(-limit..limit);
            }
            if let Some(wz) = &shape.wz {
                let scale = 1.0 / shape.in_z as f64;
                for p in &mut params[wz.clone()] {
                    *p = rng.gen_range(0.0..scale);
                }
            }
        }
        Ok(IcnnModel {
            input_dim,
            layout,
            shapes,
            params,
            meta: ModelMeta {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    /// Read one flat parameter. Intended for diagnostics and tests.
    #[doc(hidden)]
    pub fn flat_param(&self, i: usize) -> f64 {
        self.params[i]
    }

    /// Overwrite one flat parameter. Intended for diagnostics and tests.
    #[doc(hidden)]
    pub fn set_flat_param(&mut self, i: usize, v: f64) {
        self.params[i] = v;
    }

    /// Clip `W^z` at zero. Intended for diagnostics and tests.
    #[doc(hidden)]
    pub fn project_wz_pub(&mut self) {
        self.project_wz();
    }

    /// Smallest `W^z` entry; non-negative in any valid model.
    pub fn min_wz(&self) -> f64 {
        let mut min = f64::INFINITY;
        for shape in &self.shapes {
            if let Some(wz) = &shape.wz {
                for &p in &self.params[wz.clone()] {
                    min = min.min(p);
                }
            }
        }
        if min.is_finite() {
            min
        } else {
            0.0
        }
    }

    /// Clip all `W^z` entries at zero.
    pub(crate) fn project_wz(&mut self) {
        for shape in &self.shapes {
            if let Some(wz) = &shape.wz {
                for p in &mut self.params[wz.clone()] {
                    if *p < 0.0 {
                        *p = 0.0;
                    }
                }
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} inputs, got {}",
                self.input_dim,
                x.len()
            )));
        }
        Ok(())
    }

    /// Scalar network output `h_theta(ubar^r)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let (_, out) = self.forward_pass::<f64>(x);
        Ok(out)
    }

    /// Exact reverse-mode gradient of [`IcnnModel::forward`] with respect to
    /// the input: the reduced multipliers `alpha_theta^r`.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (pre, _) = self.forward_pass::<f64>(x);
        let mut input_grad = vec![0.0; self.input_dim];
        self.backward_pass::<f64>(x, &pre, 1.0, None, &mut input_grad);
        Ok(input_grad)
    }

    /// Forward pass generic over plain values and duals. Returns the
    /// pre-activations of every layer and the scalar output (the last layer
    /// is linear).
    pub(crate) fn forward_pass<S: AdValue>(&self, x: &[S]) -> (Vec<Vec<S>>, S) {
        let n_layers = self.shapes.len();
        let mut pre: Vec<Vec<S>> = Vec::with_capacity(n_layers);
        let mut z_prev: Vec<S> = Vec::new();
        for (k, shape) in self.shapes.iter().enumerate() {
            let wx = &self.params[shape.wx.clone()];
            let b = &self.params[shape.b.clone()];
            let mut a: Vec<S> = (0..shape.out_dim).map(|r| S::lift(b[r])).collect();
            for (r, acc) in a.iter_mut().enumerate() {
                let row = &wx[r * self.input_dim..(r + 1) * self.input_dim];
                for (w, xi) in row.iter().zip(x) {
                    *acc = acc.add(xi.scale(*w));
                }
            }
            if let Some(wz_range) = &shape.wz {
                let wz = &self.params[wz_range.clone()];
                for (r, acc) in a.iter_mut().enumerate() {
                    let row = &wz[r * shape.in_z..(r + 1) * shape.in_z];
                    for (w, zi) in row.iter().zip(&z_prev) {
                        *acc = acc.add(zi.scale(*w));
                    }
                }
            }
            if k + 1 < n_layers {
                z_prev = a.iter().map(|v| v.softplus()).collect();
            }
            pre.push(a);
        }
        let out = pre.last().unwrap()[0];
        (pre, out)
    }

    /// Reverse pass. Accumulates parameter gradients into `param_acc` when
    /// given (same layout as `params`) and always accumulates the input
    /// gradient. `upstream` seeds the output adjoint.
    pub(crate) fn backward_pass<S: AdValue>(
        &self,
        x: &[S],
        pre: &[Vec<S>],
        upstream: S,
        mut param_acc: Option<&mut [S]>,
        input_grad: &mut [S],
    ) {
        let n_layers = self.shapes.len();
        // activations are recomputed from the stored pre-activations
        let mut delta: Vec<S> = vec![upstream];
        for k in (0..n_layers).rev() {
            let shape = &self.shapes[k];
            let wx = &self.params[shape.wx.clone()];
            let z_prev: Option<Vec<S>> = if k > 0 {
                Some(pre[k - 1].iter().map(|v| v.softplus()).collect())
            } else {
                None
            };
            if let Some(acc) = param_acc.as_deref_mut() {
                for (r, d) in delta.iter().enumerate() {
                    acc[shape.b.start + r] = acc[shape.b.start + r].add(*d);
                    let row = shape.wx.start + r * self.input_dim;
                    for (c, xi) in x.iter().enumerate() {
                        acc[row + c] = acc[row + c].add(d.mul(*xi));
                    }
                    if let (Some(wz_range), Some(zp)) = (&shape.wz, &z_prev) {
                        let row = wz_range.start + r * shape.in_z;
                        for (c, zi) in zp.iter().enumerate() {
                            acc[row + c] = acc[row + c].add(d.mul(*zi));
                        }
                    }
                }
            }
            for (r, d) in delta.iter().enumerate() {
                let row = &wx[r * self.input_dim..(r + 1) * self.input_dim];
                for (g, w) in input_grad.iter_mut().zip(row) {
                    *g = g.add(d.scale(*w));
                }
            }
            if k > 0 {
                let wz = shape
                    .wz
                    .as_ref()
                    .map(|r| &self.params[r.clone()])
                    .expect("hidden layers past the first carry W^z");
                let mut back: Vec<S> = vec![S::lift(0.0); shape.in_z];
                for (r, d) in delta.iter().enumerate() {
                    let row = &wz[r * shape.in_z..(r + 1) * shape.in_z];
                    for (b, w) in back.iter_mut().zip(row) {
                        *b = b.add(d.scale(*w));
                    }
                }
                delta = back
                    .iter()
                    .zip(&pre[k - 1])
                    .map(|(b, a)| b.mul(a.sigmoid()))
                    .collect();
            }
        }
    }
}

/// Closure data recovered from one surrogate evaluation of normalized
/// reduced moments.
#[derive(Clone, Debug)]
pub struct InferenceResult {
    pub h: f64,
    /// Full multipliers; for scaled queries the zero component carries the
    /// `ln u0` shift.
    pub alpha: LagrangeMultipliers,
    /// Moment reconstruction of the normalized problem; component zero is
    /// one up to quadrature arithmetic.
    pub u: MomentVector,
}

/// Evaluate the surrogate closure for normalized reduced moments.
pub fn infer_normalized(
    model: &IcnnModel,
    u_reduced: &[f64],
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<InferenceResult> {
    if basis.basis_size() != model.input_dim() + 1 {
        return Err(Error::Shape(format!(
            "model with {} inputs cannot serve a basis of size {}",
            model.input_dim(),
            basis.basis_size()
        )));
    }
    let h = model.forward(u_reduced)?;
    let alpha_r = model.input_gradient(u_reduced)?;
    let alpha0 = alpha_zero_from_reduced(&alpha_r, basis, rule)?;
    let alpha = LagrangeMultipliers::from_reduced(alpha0, &alpha_r);
    let f = reconstruct_density(&alpha, basis, rule)?;
    let u = moments_of(&f, basis, rule);
    Ok(InferenceResult { h, alpha, u })
}

/// Evaluate the surrogate for unnormalized moments: normalize, infer, and
/// shift `alpha_0` by `ln u0`. `h` and `u` refer to the normalized problem.
pub fn infer_scaled(
    model: &IcnnModel,
    u: &MomentVector,
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Result<InferenceResult> {
    let (u0, reduced) = crate::realizability::normalize(u)?;
    let mut result = infer_normalized(model, &reduced.values, basis, rule)?;
    result.alpha = crate::entropy::rescale_alpha(&result.alpha, u0)?;
    Ok(result)
}

/// Parallel [`infer_normalized`] over a batch of reduced moment vectors.
pub fn infer_normalized_batch(
    model: &IcnnModel,
    inputs: &[Vec<f64>],
    basis: &MomentBasis,
    rule: &QuadratureRule,
) -> Vec<Result<InferenceResult>> {
    inputs
        .par_iter()
        .map(|x| infer_normalized(model, x, basis, rule))
        .collect()
}

const MODEL_MAGIC: &str = "mnkit-icnn v1";

/// Write the model as a self-describing text container: magic/version line,
/// layout header, metadata, and one parameter per line in shortest
/// round-trip decimal (lossless for f64).
pub fn save_model(model: &IcnnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(display.clone(), e);
    writeln!(w, "{MODEL_MAGIC}").map_err(io_err)?;
    writeln!(w, "input_dim {}", model.input_dim).map_err(io_err)?;
    writeln!(w, "width {}", model.layout.width).map_err(io_err)?;
    writeln!(w, "depth {}", model.layout.depth).map_err(io_err)?;
    writeln!(w, "epochs {}", model.meta.epochs).map_err(io_err)?;
    writeln!(w, "seed {}", model.meta.seed).map_err(io_err)?;
    if let Some(hash) = &model.meta.dataset_hash {
        writeln!(w, "dataset_hash {hash}").map_err(io_err)?;
    }
    if let Some([h, a, u]) = model.meta.final_train {
        writeln!(w, "final_train {h} {a} {u}").map_err(io_err)?;
    }
    if let Some([h, a, u]) = model.meta.final_val {
        writeln!(w, "final_val {h} {a} {u}").map_err(io_err)?;
    }
    writeln!(w, "params {}", model.params.len()).map_err(io_err)?;
    for p in &model.params {
        writeln!(w, "{p}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<IcnnModel> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::ModelFormat(format!("{display}: truncated before {what}")))?
            .map_err(|e| Error::io(display.clone(), e))
    };
    let magic = next("magic")?;
    if magic.trim() != MODEL_MAGIC {
        return Err(Error::ModelFormat(format!(
            "{display}: bad magic {magic:?}, expected {MODEL_MAGIC:?}"
        )));
    }
    let mut input_dim = None;
    let mut width = None;
    let mut depth = None;
    let mut meta = ModelMeta::default();
    let param_count;
    loop {
        let line = next("header")?;
        let line = line.trim();
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| Error::ModelFormat(format!("{display}: bad header line {line:?}")))?;
        let bad = |what: &str| Error::ModelFormat(format!("{display}: bad {what} {value:?}"));
        match key {
            "input_dim" => input_dim = Some(value.parse().map_err(|_| bad("input_dim"))?),
            "width" => width = Some(value.parse().map_err(|_| bad("width"))?),
            "depth" => depth = Some(value.parse().map_err(|_| bad("depth"))?),
            "epochs" => meta.epochs = value.parse().map_err(|_| bad("epochs"))?,
            "seed" => meta.seed = value.parse().map_err(|_| bad("seed"))?,
            "dataset_hash" => meta.dataset_hash = Some(value.to_string()),
            "final_train" | "final_val" => {
                let parts: Vec<f64> = value
                    .split_whitespace()
                    .map(|v| v.parse().map_err(|_| bad(key)))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(bad(key));
                }
                let triple = [parts[0], parts[1], parts[2]];
                if key == "final_train" {
                    meta.final_train = Some(triple);
                } else {
                    meta.final_val = Some(triple);
                }
            }
            "params" => {
                param_count = value.parse::<usize>().map_err(|_| bad("params"))?;
                break;
            }
            other => {
                return Err(Error::ModelFormat(format!(
                    "{display}: unknown header key {other:?}"
                )))
            }
        }
    }
    let input_dim =
        input_dim.ok_or_else(|| Error::ModelFormat(format!("{display}: missing input_dim")))?;
    let layout = Layout::new(
        width.ok_or_else(|| Error::ModelFormat(format!("{display}: missing width")))?,
        depth.ok_or_else(|| Error::ModelFormat(format!("{display}: missing depth")))?,
    )?;
    let (shapes, expected) = build_shapes(input_dim, layout);
    if expected != param_count {
        return Err(Error::ModelFormat(format!(
            "{display}: layout implies {expected} parameters, header says {param_count}"
        )));
    }
    let mut params = Vec::with_capacity(param_count);
    for i in 0..param_count {
        let line = next(&format!("parameter {i}"))?;
        params.push(line.trim().parse::<f64>().map_err(|_| {
            Error::ModelFormat(format!("{display}: bad parameter value {line:?}"))
        })?);
    }
    let model = IcnnModel {
        input_dim,
        layout,
        shapes,
        params,
        meta,
    };
    if model.min_wz() < 0.0 {
        return Err(Error::ModelFormat(format!(
            "{display}: negative W^z entry violates convexity"
        )));
    }
    Ok(model)
}

/// Scalar-like values the network passes can run over: plain `f64` and
/// forward-mode duals. The dual tangent rides along the same code path, so
/// one reverse pass over duals yields parameter derivatives of the input
/// gradient.
pub(crate) trait AdValue: Copy {
    fn lift(c: f64) -> Self;
    fn add(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn scale(self, c: f64) -> Self;
    fn softplus(self) -> Self;
    fn sigmoid(self) -> Self;
}

pub(crate) fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl AdValue for f64 {
    fn lift(c: f64) -> Self {
        c
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
}

/// Forward-mode dual number `(value, tangent)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dual {
    pub v: f64,
    pub t: f64,
}

impl AdValue for Dual {
    fn lift(c: f64) -> Self {
        Dual { v: c, t: 0.0 }
    }
    fn add(self, o: Self) -> Self {
        Dual {
            v: self.v + o.v,
            t: self.t + o.t,
        }
    }
    fn mul(self, o: Self) -> Self {
        Dual {
            v: self.v * o.v,
            t: self.t * o.v + self.v * o.t,
        }
    }
    fn scale(self, c: f64) -> Self {
        Dual {
            v: self.v * c,
            t: self.t * c,
        }
    }
    fn softplus(self) -> Self {
        Dual {
            v: softplus_f64(self.v),
            t: sigmoid_f64(self.v) * self.t,
        }
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.v);
        Dual {
            v: s,
            t: s * (1.0 - s) * self.t,
        }
    }
}
