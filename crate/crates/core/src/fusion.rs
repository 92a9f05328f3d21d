//! Numeric simulator of geometry/visual token fusion.
//!
//! An image of `h × w` pixels with patch size `p` yields a `⌊h/p⌋ × ⌊w/p⌋`
//! grid of `c`-channel features. Each 2×2 block of neighbouring patches is
//! concatenated (row-major within the block) and pushed through a two-layer
//! MLP, giving a `⌊h/2p⌋ × ⌊w/2p⌋ × c` grid. Geometry features merged this
//! way are added elementwise to the merged visual tokens.
//!
//! All arithmetic is `f64`. The MLP applies its activation after the first
//! layer only.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Visual,
    Geometry,
    VisualMerged,
    GeometryMerged,
    Fused,
}

impl Provenance {
    fn merged(self) -> Result<Self> {
        match self {
            Provenance::Visual => Ok(Provenance::VisualMerged),
            Provenance::Geometry => Ok(Provenance::GeometryMerged),
            other => Err(Error::invalid(format!("{other:?} tokens cannot be merged again"))),
        }
    }
}

/// Dense row-major `rows × cols × channels` feature array.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::invalid(format!("grid dimensions must be positive, got {rows}×{cols}×{channels}")));
        }
        if data.len() != rows * cols * channels {
            return Err(Error::invalid(format!(
                "grid {rows}×{cols}×{channels} needs {} values, got {}",
                rows * cols * channels,
                data.len()
            )));
        }
        Ok(Grid { rows, cols, channels, data })
    }

    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Result<Self> {
        Self::new(rows, cols, channels, vec![0.0; rows * cols * channels])
    }

    /// Uniform values in `[-1, 1]` from a seeded generator.
    pub fn random(rows: usize, cols: usize, channels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(rows, cols, channels, (0..rows * cols * channels).map(|_| rng.gen_range(-1.0..=1.0)).collect())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn token(&self, r: usize, c: usize) -> &[f64] {
        let start = (r * self.cols + c) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn scaled(&self, alpha: f64) -> Grid {
        Grid { data: self.data.iter().map(|v| v * alpha).collect(), ..self.clone() }
    }

    /// Flat text layout: a `rows cols channels` header line, then the values
    /// in row-major order, one token (all channels) per line. Lines starting
    /// with `#` are comments.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.rows, self.cols, self.channels);
        for token in self.data.chunks(self.channels) {
            let vals: Vec<String> = token.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut words = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(str::split_whitespace);
        let mut dim = |name: &str| -> Result<usize> {
            words
                .next()
                .ok_or_else(|| Error::invalid(format!("grid file is missing {name}")))?
                .parse()
                .map_err(|_| Error::invalid(format!("grid {name} is not an integer")))
        };
        let (rows, cols, channels) = (dim("rows")?, dim("cols")?, dim("channels")?);
        let data = words
            .map(|w| w.parse::<f64>().map_err(|_| Error::invalid(format!("bad grid value {w:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Grid::new(rows, cols, channels, data)
    }
}

/// Per-patch features before merging (`T^V` or `T^G`).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub grid: Grid,
    pub provenance: Provenance,
}

/// Merged tokens (`T^{V'}`, `T^{G'}`, or their fused sum).
#[derive(Debug, Clone, PartialEq)]
pub struct MergedGrid {
    pub grid: Grid,
    pub provenance: Provenance,
}

/// Patch-grid shape for an `h × w` image with patch size `p`.
pub fn patch_grid_shape(height: usize, width: usize, patch: usize) -> Result<(usize, usize)> {
    if patch == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let (rows, cols) = (height / patch, width / patch);
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("{height}×{width} image is smaller than one {patch}px patch")));
    }
    Ok((rows, cols))
}

/// Shape after 2×2 merging, i.e. `(⌊h/2p⌋, ⌊w/2p⌋)`. Odd patch grids are
/// rejected rather than padded.
pub fn merged_shape(height: usize, width: usize, patch: usize) -> Result<(usize, usize)> {
    let (rows, cols) = patch_grid_shape(height, width, patch)?;
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::invalid(format!("patch grid {rows}×{cols} is not even in both dimensions")));
    }
    Ok((rows / 2, cols / 2))
}

impl PatchGrid {
    pub fn new(grid: Grid, provenance: Provenance) -> Self {
        PatchGrid { grid, provenance }
    }

    /// Zero features for an image of the given size.
    pub fn for_image(height: usize, width: usize, patch: usize, channels: usize, provenance: Provenance) -> Result<Self> {
        let (rows, cols) = patch_grid_shape(height, width, patch)?;
        Ok(PatchGrid::new(Grid::zeros(rows, cols, channels)?, provenance))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Tanh approximation of GELU.
    Gelu,
    Identity,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_C: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * z * (1.0 + (GELU_K * (z + GELU_C * z * z * z)).tanh()),
            Activation::Identity => z,
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_K * (z + GELU_C * z * z * z)).tanh();
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * z * z)
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(x·W1 + b1)·W2 + b2` with `W1: in × hidden`, `W2: hidden × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerMlp {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub activation: Activation,
}

/// Gradients of `sum(outputs)` with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl TwoLayerMlp {
    pub fn new(w1: DMatrix<f64>, b1: DVector<f64>, w2: DMatrix<f64>, b2: DVector<f64>, activation: Activation) -> Result<Self> {
        let hidden = w1.ncols();
        if b1.len() != hidden || w2.nrows() != hidden || b2.len() != w2.ncols() {
            return Err(Error::invalid(format!(
                "inconsistent MLP shapes: W1 {}×{}, b1 {}, W2 {}×{}, b2 {}",
                w1.nrows(),
                w1.ncols(),
                b1.len(),
                w2.nrows(),
                w2.ncols(),
                b2.len()
            )));
        }
        let mlp = TwoLayerMlp { w1, b1, w2, b2, activation };
        if mlp.parameters().any(|v| !v.is_finite()) {
            return Err(Error::invalid("MLP parameters must be finite"));
        }
        Ok(mlp)
    }

    /// Merger MLP for `channels`-wide tokens (input `4·channels`), with
    /// parameters drawn uniformly from `[-0.1, 0.1]`.
    pub fn seeded(channels: usize, hidden: usize, seed: u64, activation: Activation) -> Result<Self> {
        if channels == 0 || hidden == 0 {
            return Err(Error::invalid("MLP widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || rng.gen_range(-0.1..=0.1);
        let w1 = DMatrix::from_fn(4 * channels, hidden, |_, _| draw());
        let b1 = DVector::from_fn(hidden, |_, _| draw());
        let w2 = DMatrix::from_fn(hidden, channels, |_, _| draw());
        let b2 = DVector::from_fn(channels, |_, _| draw());
        Self::new(w1, b1, w2, b2, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(self.b1.iter()).chain(self.w2.iter()).chain(self.b2.iter())
    }

    fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn parameter_mut(&mut self, mut i: usize) -> &mut f64 {
        if i < self.w1.len() {
            return &mut self.w1.as_mut_slice()[i];
        }
        i -= self.w1.len();
        if i < self.b1.len() {
            return &mut self.b1.as_mut_slice()[i];
        }
        i -= self.b1.len();
        if i < self.w2.len() {
            return &mut self.w2.as_mut_slice()[i];
        }
        i -= self.w2.len();
        &mut self.b2.as_mut_slice()[i]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!("MLP expects {} inputs, got {}", self.input_dim(), x.len())));
        }
        Ok(())
    }

    fn hidden_pre(&self, x: &[f64]) -> DVector<f64> {
        self.w1.tr_mul(&DVector::from_column_slice(x)) + &self.b1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let hidden = self.hidden_pre(x).map(|z| self.activation.apply(z));
        Ok((self.w2.tr_mul(&hidden) + &self.b2).as_slice().to_vec())
    }

    /// Backpropagates `L = sum(forward(x))`.
    pub fn gradients(&self, x: &[f64]) -> Result<MlpGradients> {
        self.check_input(x)?;
        let z1 = self.hidden_pre(x);
        let a1 = z1.map(|z| self.activation.apply(z));
        let dy = DVector::from_element(self.output_dim(), 1.0);
        let w2 = &a1 * dy.transpose();
        let da1 = &self.w2 * &dy;
        let dz1 = da1.zip_map(&z1, |g, z| g * self.activation.derivative(z));
        let w1 = DVector::from_column_slice(x) * dz1.transpose();
        Ok(MlpGradients { w1, b1: dz1, w2, b2: dy })
    }

    fn loss(&self, x: &[f64]) -> f64 {
        self.forward(x).map(|y| y.iter().sum()).unwrap_or(f64::NAN)
    }
}

impl MlpGradients {
    fn flat(&self) -> Vec<f64> {
        self.w1.iter().chain(self.b1.iter()).chain(self.w2.iter()).chain(self.b2.iter()).copied().collect()
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Largest disagreement between analytic gradients and central finite
/// differences over all parameters, as `|a − n| / max(1, |a|, |n|)`.
pub fn mlp_gradient_check(mlp: &TwoLayerMlp, input: &[f64]) -> Result<f64> {
    let analytic = mlp.gradients(input)?.flat();
    let mut probe = mlp.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate().take(mlp.parameter_count()) {
        let original = *probe.parameter_mut(i);
        *probe.parameter_mut(i) = original + FD_STEP;
        let plus = probe.loss(input);
        *probe.parameter_mut(i) = original - FD_STEP;
        let minus = probe.loss(input);
        *probe.parameter_mut(i) = original;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max((a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs()));
    }
    Ok(worst)
}

/// Concatenates every 2×2 block `(2r, 2c), (2r, 2c+1), (2r+1, 2c),
/// (2r+1, 2c+1)` and maps it through `mlp`.
pub fn merge_2x2(patches: &PatchGrid, mlp: &TwoLayerMlp) -> Result<MergedGrid> {
    let (rows, cols, channels) = patches.grid.shape();
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::invalid(format!("patch grid {rows}×{cols} is not even in both dimensions")));
    }
    if mlp.input_dim() != 4 * channels {
        return Err(Error::invalid(format!(
            "MLP input width {} does not match 4 × {channels} channels",
            mlp.input_dim()
        )));
    }
    let out_channels = mlp.output_dim();
    let provenance = patches.provenance.merged()?;
    let mut data = Vec::with_capacity(rows / 2 * cols / 2 * out_channels);
    let mut block = Vec::with_capacity(4 * channels);
    for r in 0..rows / 2 {
        for c in 0..cols / 2 {
            block.clear();
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                block.extend_from_slice(patches.grid.token(2 * r + dr, 2 * c + dc));
            }
            data.extend(mlp.forward(&block)?);
        }
    }
    Ok(MergedGrid { grid: Grid::new(rows / 2, cols / 2, out_channels, data)?, provenance })
}

/// Elementwise `geometry + visual`.
pub fn fuse(geometry: &MergedGrid, visual: &MergedGrid) -> Result<MergedGrid> {
    if geometry.grid.shape() != visual.grid.shape() {
        return Err(Error::invalid(format!(
            "cannot fuse grids of shapes {:?} and {:?}",
            geometry.grid.shape(),
            visual.grid.shape()
        )));
    }
    let (rows, cols, channels) = geometry.grid.shape();
    let data = geometry.grid.data.iter().zip(&visual.grid.data).map(|(g, v)| g + v).collect();
    Ok(MergedGrid { grid: Grid::new(rows, cols, channels, data)?, provenance: Provenance::Fused })
}
