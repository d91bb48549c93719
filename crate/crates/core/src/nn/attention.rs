use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{softmax_rows, LayerNorm, LayerNormCache, Linear, Mlp, MlpCache, Params, Real};

/// Multi-head self-attention over independent sequences of equal length
/// stacked along the row axis. No masking: every token attends to every
/// token of its own sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention<T> {
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    x: Array2<T>,
    qkv: Array2<T>,
    /// One (L, L) probability matrix per (sequence, head).
    probs: Vec<Array2<T>>,
    ctx: Array2<T>,
    seq_len: usize,
}

impl<T: Real> SelfAttention<T> {
    pub fn new<R: Rng + ?Sized>(d: usize, heads: usize, rng: &mut R) -> Self {
        assert!(
            heads > 0 && d.is_multiple_of(heads),
            "width {d} not divisible by {heads} heads"
        );
        Self {
            qkv: Linear::new(d, 3 * d, rng),
            proj: Linear::new(d, d, rng),
            heads,
        }
    }

    fn dims(&self) -> (usize, usize) {
        let d = self.proj.w.nrows();
        (d, d / self.heads)
    }

    pub fn forward(&self, x: &ArrayView2<T>, seq_len: usize) -> (Array2<T>, AttentionCache<T>) {
        let (d, dh) = self.dims();
        assert_eq!(x.nrows() % seq_len, 0, "rows must be whole sequences");
        let n_seq = x.nrows() / seq_len;
        let qkv = self.qkv.forward(x);
        let scale = T::one() / T::from_usize(dh).expect("width").sqrt();
        let mut ctx = Array2::zeros((x.nrows(), d));
        let mut probs = Vec::with_capacity(n_seq * self.heads);
        for b in 0..n_seq {
            let rows = b * seq_len..(b + 1) * seq_len;
            for h in 0..self.heads {
                let q = qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                let k = qkv.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
                let v = qkv.slice(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let p = softmax_rows(&(q.dot(&k.t()) * scale).view());
                ctx.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh])
                    .assign(&p.dot(&v));
                probs.push(p);
            }
        }
        let y = self.proj.forward(&ctx.view());
        (
            y,
            AttentionCache {
                x: x.to_owned(),
                qkv,
                probs,
                ctx,
                seq_len,
            },
        )
    }

    pub fn backward(&self, c: &AttentionCache<T>, dy: &ArrayView2<T>, g: &mut Self) -> Array2<T> {
        let (d, dh) = self.dims();
        let l = c.seq_len;
        let dctx = self.proj.backward(&c.ctx.view(), dy, &mut g.proj);
        let scale = T::one() / T::from_usize(dh).expect("width").sqrt();
        let mut dqkv = Array2::zeros(c.qkv.raw_dim());
        for b in 0..c.x.nrows() / l {
            let rows = b * l..(b + 1) * l;
            for h in 0..self.heads {
                let p = &c.probs[b * self.heads + h];
                let q = c.qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                let k = c.qkv.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
                let v = c
                    .qkv
                    .slice(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let dout = dctx.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                let dp = dout.dot(&v.t());
                let dv = p.t().dot(&dout);
                // Softmax backward, row by row.
                let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = (dp - &row_dot) * p * scale;
                let dq = ds.dot(&k);
                let dk = ds.t().dot(&q);
                dqkv.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh])
                    .assign(&dq);
                dqkv.slice_mut(s![rows.clone(), d + h * dh..d + (h + 1) * dh])
                    .assign(&dk);
                dqkv.slice_mut(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh])
                    .assign(&dv);
            }
        }
        self.qkv.backward(&c.x.view(), &dqkv.view(), &mut g.qkv)
    }
}

impl<T: Real> Params<T> for SelfAttention<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [T])) {
        self.qkv.visit(f);
        self.proj.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.qkv.visit_mut(f);
        self.proj.visit_mut(f);
    }
}

/// Pre-LN transformer encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock<T> {
    pub ln1: LayerNorm<T>,
    pub attn: SelfAttention<T>,
    pub ln2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    mlp: MlpCache<T>,
}

impl<T: Real> EncoderBlock<T> {
    pub fn new<R: Rng + ?Sized>(d: usize, heads: usize, mlp_ratio: usize, rng: &mut R) -> Self {
        let mut mlp = Mlp::new(d, d * mlp_ratio, d, rng);
        // Residual branches start small so a deep stack begins near identity.
        mlp.fc2 = mlp.fc2.scaled(0.5);
        Self {
            ln1: LayerNorm::new(d),
            attn: SelfAttention::new(d, heads, rng),
            ln2: LayerNorm::new(d),
            mlp,
        }
    }

    pub fn forward(&self, x: &ArrayView2<T>, seq_len: usize) -> (Array2<T>, EncoderCache<T>) {
        let (h, ln1) = self.ln1.forward(x);
        let (a, attn) = self.attn.forward(&h.view(), seq_len);
        let x1 = x + &a;
        let (h2, ln2) = self.ln2.forward(&x1.view());
        let (m, mlp) = self.mlp.forward(&h2.view());
        (
            x1 + m,
            EncoderCache {
                ln1,
                attn,
                ln2,
                mlp,
            },
        )
    }

    pub fn backward(&self, c: &EncoderCache<T>, dy: &ArrayView2<T>, g: &mut Self) -> Array2<T> {
        let dh2 = self.mlp.backward(&c.mlp, dy, &mut g.mlp);
        let dx1 = self.ln2.backward(&c.ln2, &dh2.view(), &mut g.ln2) + dy;
        let dh = self.attn.backward(&c.attn, &dx1.view(), &mut g.attn);
        self.ln1.backward(&c.ln1, &dh.view(), &mut g.ln1) + dx1
    }
}

impl<T: Real> Params<T> for EncoderBlock<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [T])) {
        self.ln1.visit(f);
        self.attn.visit(f);
        self.ln2.visit(f);
        self.mlp.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.ln1.visit_mut(f);
        self.attn.visit_mut(f);
        self.ln2.visit_mut(f);
        self.mlp.visit_mut(f);
    }
}
