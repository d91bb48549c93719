use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::geometry::{BlockShape, MAX_BLOCKS};
use crate::nn::{
    randn, sinusoidal, EncoderBlock, EncoderCache, LayerNorm, LayerNormCache, Linear, Mlp,
    MlpCache, Params, Real,
};

pub const POSE_DIM: usize = 6;
pub const N_PATCHES: usize = 16;
pub const PATCH_PIXELS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    /// Object-token budget N.
    pub max_blocks: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n_layers: 3,
            n_heads: 4,
            mlp_ratio: 2,
            max_blocks: MAX_BLOCKS,
        }
    }
}

impl DenoiserConfig {
    pub fn seq_len(&self) -> usize {
        self.max_blocks + N_PATCHES
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.d == 0 || self.n_heads == 0 || !self.d.is_multiple_of(self.n_heads) || !self.d.is_multiple_of(2) {
            return Err(DiffusionError::Config(format!(
                "width {} must be even and divisible by {} heads",
                self.d, self.n_heads
            )));
        }
        if self.max_blocks == 0 || self.n_layers == 0 || self.mlp_ratio == 0 {
            return Err(DiffusionError::Config(
                "layer, block and mlp sizes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A batch of B fixed-length sequences. Object rows are padded to N per
/// sequence; rows at or beyond a sequence's block count are never read.
#[derive(Debug, Clone)]
pub struct DenoiserBatch<T> {
    /// (B * N, 6) noised, normalized poses.
    pub poses: Array2<T>,
    /// B * N shape ids; padded entries are ignored.
    pub shapes: Vec<BlockShape>,
    /// Block count k per sequence.
    pub counts: Vec<usize>,
    /// Diffusion step per sequence, 1-based.
    pub t: Vec<usize>,
    /// (B * 16, 256) silhouette patches.
    pub patches: Array2<T>,
}

impl<T: Real> DenoiserBatch<T> {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Assemble from per-sequence parts. `poses[b]` holds k rows.
    pub fn assemble(
        max_blocks: usize,
        poses: &[Vec<[f64; POSE_DIM]>],
        shapes: &[Vec<BlockShape>],
        t: &[usize],
        patches: &[&[[f32; PATCH_PIXELS]]],
    ) -> Result<Self, DiffusionError> {
        let b = poses.len();
        let mut out_poses = Array2::zeros((b * max_blocks, POSE_DIM));
        let mut out_shapes = vec![BlockShape::Cube; b * max_blocks];
        let mut counts = Vec::with_capacity(b);
        for (i, (p, sh)) in poses.iter().zip(shapes).enumerate() {
            let k = p.len();
            if k > max_blocks {
                return Err(DiffusionError::Cardinality { k, max: max_blocks });
            }
            assert_eq!(sh.len(), k, "one shape per pose");
            for (j, row) in p.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    out_poses[[i * max_blocks + j, c]] = T::c(v);
                }
                out_shapes[i * max_blocks + j] = sh[j];
            }
            counts.push(k);
        }
        let mut out_patches = Array2::zeros((b * N_PATCHES, PATCH_PIXELS));
        for (i, ps) in patches.iter().enumerate() {
            assert_eq!(ps.len(), N_PATCHES);
            for (j, patch) in ps.iter().enumerate() {
                for (c, &v) in patch.iter().enumerate() {
                    out_patches[[i * N_PATCHES + j, c]] = T::c(v as f64);
                }
            }
        }
        Ok(Self {
            poses: out_poses,
            shapes: out_shapes,
            counts,
            t: t.to_vec(),
            patches: out_patches,
        })
    }
}

/// Transformer noise predictor D(p~, t, s, S).
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser<T> {
    pub config: DenoiserConfig,
    /// One learned d-vector per block shape.
    pub shape_codebook: Array2<T>,
    pub pose_in: Mlp<T>,
    pub t_embed: Mlp<T>,
    pub patch_encoder: Mlp<T>,
    pub blocks: Vec<EncoderBlock<T>>,
    pub ln_out: LayerNorm<T>,
    pub pose_out: Linear<T>,
    /// Fixed sinusoidal embeddings of the 16 patch positions.
    patch_pos: Array2<T>,
}

pub struct DenoiserCache<T> {
    pose_in: MlpCache<T>,
    t_embed: MlpCache<T>,
    patch: MlpCache<T>,
    blocks: Vec<EncoderCache<T>>,
    ln_out: LayerNormCache<T>,
    objects: Array2<T>,
}

impl<T: Real> Denoiser<T> {
    pub fn new<R: Rng + ?Sized>(
        config: DenoiserConfig,
        rng: &mut R,
    ) -> Result<Self, DiffusionError> {
        config.validate()?;
        let d = config.d;
        Ok(Self {
            config,
            shape_codebook: randn((BlockShape::ALL.len(), d), 0.5, rng),
            pose_in: Mlp::new(POSE_DIM, d, d, rng),
            t_embed: Mlp::new(d, d, d, rng),
            patch_encoder: Mlp::new(PATCH_PIXELS, d, d, rng),
            blocks: (0..config.n_layers)
                .map(|_| EncoderBlock::new(d, config.n_heads, config.mlp_ratio, rng))
                .collect(),
            ln_out: LayerNorm::new(d),
            pose_out: Linear::new(d, POSE_DIM, rng).scaled(0.1),
            patch_pos: sinusoidal(&(0..N_PATCHES).map(|p| p as f64).collect::<Vec<_>>(), d),
        })
    }

    fn time_features(&self, t: &[usize]) -> Array2<T> {
        sinusoidal(
            &t.iter().map(|&t| t as f64).collect::<Vec<_>>(),
            self.config.d,
        )
    }

    /// Token sequence for the batch: N object tokens (zero beyond k) then
    /// 16 patch tokens per sequence.
    fn tokens(
        &self,
        batch: &DenoiserBatch<T>,
    ) -> (Array2<T>, MlpCache<T>, MlpCache<T>, MlpCache<T>) {
        let (n, d, l) = (self.config.max_blocks, self.config.d, self.config.seq_len());
        let b = batch.len();
        assert_eq!(batch.poses.nrows(), b * n, "pose rows must be B * N");
        let (pose_h, pose_c) = self.pose_in.forward(&batch.poses.view());
        let (t_h, t_c) = self.t_embed.forward(&self.time_features(&batch.t).view());
        let (patch_h, patch_c) = self.patch_encoder.forward(&batch.patches.view());
        let mut x = Array2::zeros((b * l, d));
        for seq in 0..b {
            for i in 0..batch.counts[seq] {
                let src = seq * n + i;
                let mut row = x.row_mut(seq * l + i);
                row.assign(&pose_h.row(src));
                row += &self.shape_codebook.row(batch.shapes[src].index());
                row += &t_h.row(seq);
            }
            let mut patch_rows = x.slice_mut(s![seq * l + n..(seq + 1) * l, ..]);
            patch_rows.assign(&patch_h.slice(s![seq * N_PATCHES..(seq + 1) * N_PATCHES, ..]));
            patch_rows += &self.patch_pos;
        }
        (x, pose_c, t_c, patch_c)
    }

    /// Predicted noise, (B * N, 6); rows beyond each k are meaningless.
    pub fn forward(&self, batch: &DenoiserBatch<T>) -> (Array2<T>, DenoiserCache<T>) {
        for &k in &batch.counts {
            assert!(
                k <= self.config.max_blocks,
                "cardinality checked at assembly"
            );
        }
        let (n, l) = (self.config.max_blocks, self.config.seq_len());
        let (mut x, pose_c, t_c, patch_c) = self.tokens(batch);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(&x.view(), l);
            x = y;
            caches.push(c);
        }
        let objects = gather_objects(&x, batch.len(), n, l);
        let (h, ln_c) = self.ln_out.forward(&objects.view());
        let out = self.pose_out.forward(&h.view());
        (
            out,
            DenoiserCache {
                pose_in: pose_c,
                t_embed: t_c,
                patch: patch_c,
                blocks: caches,
                ln_out: ln_c,
                objects: h,
            },
        )
    }

    pub fn predict(&self, batch: &DenoiserBatch<T>) -> Array2<T> {
        self.forward(batch).0
    }

    /// Accumulates dL/dparams into `g` given dL/d(output).
    pub fn backward(
        &self,
        batch: &DenoiserBatch<T>,
        cache: &DenoiserCache<T>,
        dout: &ArrayView2<T>,
        g: &mut Self,
    ) {
        let (n, l, d) = (self.config.max_blocks, self.config.seq_len(), self.config.d);
        let b = batch.len();
        let dh = self
            .pose_out
            .backward(&cache.objects.view(), dout, &mut g.pose_out);
        let dobj = self
            .ln_out
            .backward(&cache.ln_out, &dh.view(), &mut g.ln_out);
        let mut dx = Array2::zeros((b * l, d));
        for seq in 0..b {
            dx.slice_mut(s![seq * l..seq * l + n, ..])
                .assign(&dobj.slice(s![seq * n..(seq + 1) * n, ..]));
        }
        for (block, (c, gb)) in self
            .blocks
            .iter()
            .zip(cache.blocks.iter().zip(g.blocks.iter_mut()))
            .rev()
        {
            dx = block.backward(c, &dx.view(), gb);
        }

        let mut dpose = Array2::zeros((b * n, d));
        let mut dt = Array2::zeros((b, d));
        let mut dpatch = Array2::zeros((b * N_PATCHES, d));
        for seq in 0..b {
            for i in 0..batch.counts[seq] {
                let row = dx.row(seq * l + i);
                let src = seq * n + i;
                dpose.row_mut(src).assign(&row);
                let mut code = g.shape_codebook.row_mut(batch.shapes[src].index());
                code += &row;
                let mut trow = dt.row_mut(seq);
                trow += &row;
            }
            dpatch
                .slice_mut(s![seq * N_PATCHES..(seq + 1) * N_PATCHES, ..])
                .assign(&dx.slice(s![seq * l + n..(seq + 1) * l, ..]));
        }
        self.pose_in
            .backward_params(&cache.pose_in, &dpose.view(), &mut g.pose_in);
        self.t_embed
            .backward_params(&cache.t_embed, &dt.view(), &mut g.t_embed);
        self.patch_encoder
            .backward_params(&cache.patch, &dpatch.view(), &mut g.patch_encoder);
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill_zero();
        g.patch_pos = self.patch_pos.clone();
        g
    }
}

fn gather_objects<T: Real>(x: &Array2<T>, b: usize, n: usize, l: usize) -> Array2<T> {
    let mut out = Array2::zeros((b * n, x.ncols()));
    for seq in 0..b {
        out.slice_mut(s![seq * n..(seq + 1) * n, ..])
            .assign(&x.slice(s![seq * l..seq * l + n, ..]));
    }
    out
}

impl<T: Real> Params<T> for Denoiser<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [T])) {
        f(self.shape_codebook.as_slice().expect("contiguous"));
        self.pose_in.visit(f);
        self.t_embed.visit(f);
        self.patch_encoder.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
        self.ln_out.visit(f);
        self.pose_out.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        f(self.shape_codebook.as_slice_mut().expect("contiguous"));
        self.pose_in.visit_mut(f);
        self.t_embed.visit_mut(f);
        self.patch_encoder.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.ln_out.visit_mut(f);
        self.pose_out.visit_mut(f);
    }
}

/// Per-sequence mean over its k blocks of the squared error norm, then
/// mean over the batch. Returns the loss and dL/d(eps_hat); padded rows
/// get zero gradient.
pub fn noise_loss<T: Real>(
    eps_hat: &ArrayView2<T>,
    eps: &ArrayView2<T>,
    counts: &[usize],
    n: usize,
) -> (T, Array2<T>) {
    let b = T::from_usize(counts.len().max(1)).expect("count");
    let mut grad = Array2::zeros(eps_hat.raw_dim());
    let mut total = T::zero();
    for (seq, &k) in counts.iter().enumerate() {
        let kk = T::from_usize(k.max(1)).expect("count");
        let mut seq_loss = T::zero();
        for i in 0..k {
            let r = seq * n + i;
            for c in 0..POSE_DIM {
                let diff = eps_hat[[r, c]] - eps[[r, c]];
                seq_loss += diff * diff;
                grad[[r, c]] = T::c(2.0) * diff / (kk * b);
            }
        }
        total += seq_loss / kk;
    }
    (total / b, grad)
}

/// For tests and diagnostics: the model's input-space embedding of a
/// batch (token matrix), exposing the tokenization contract.
pub fn tokenize<T: Real>(model: &Denoiser<T>, batch: &DenoiserBatch<T>) -> Array2<T> {
    model.tokens(batch).0
}
