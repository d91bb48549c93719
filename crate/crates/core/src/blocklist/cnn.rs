use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::geometry::{Silhouette64, SIL_SIZE};
use crate::nn::{relu, relu_backward, Conv2d, ConvCache, ConvShape, Linear, Params, Real};

pub const CHANNELS: [usize; 4] = [1, 16, 32, 64];
pub const HIDDEN: usize = 128;
const FINAL_SIDE: usize = SIL_SIZE / 8;

/// Three stride-2 conv layers (64 -> 32 -> 16 -> 8 pixels) and two fully
/// connected layers producing one logit per block-list class.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockListNet<T> {
    pub convs: [Conv2d<T>; 3],
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

pub struct NetCache<T> {
    convs: Vec<(ConvCache<T>, Array2<T>)>,
    flat: Array2<T>,
    hidden_pre: Array2<T>,
    hidden: Array2<T>,
    batch: usize,
}

impl<T: Real> BlockListNet<T> {
    pub fn new<R: Rng + ?Sized>(n_classes: usize, rng: &mut R) -> Self {
        Self {
            convs: [
                Conv2d::new(CHANNELS[0], CHANNELS[1], rng),
                Conv2d::new(CHANNELS[1], CHANNELS[2], rng),
                Conv2d::new(CHANNELS[2], CHANNELS[3], rng),
            ],
            fc1: Linear::new(FINAL_SIDE * FINAL_SIDE * CHANNELS[3], HIDDEN, rng),
            fc2: Linear::new(HIDDEN, n_classes, rng),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.fc2.b.len()
    }

    /// Stack silhouettes into a (B * 64 * 64, 1) pixel matrix.
    pub fn images(sils: &[&Silhouette64]) -> Array2<T> {
        let px: Vec<T> = sils
            .iter()
            .flat_map(|s| s.to_f32())
            .map(|v| T::c(v as f64))
            .collect();
        Array2::from_shape_vec((px.len(), 1), px).expect("pixel count")
    }

    pub fn forward(&self, images: &Array2<T>) -> (Array2<T>, NetCache<T>) {
        let batch = images.nrows() / (SIL_SIZE * SIL_SIZE);
        let mut shape = ConvShape {
            batch,
            height: SIL_SIZE,
            width: SIL_SIZE,
        };
        let mut x = images.clone();
        let mut convs = Vec::with_capacity(3);
        for conv in &self.convs {
            let (pre, out, cache) = conv.forward(&x.view(), shape);
            x = relu(&pre);
            convs.push((cache, pre));
            shape = out;
        }
        let flat = x
            .into_shape_with_order((batch, FINAL_SIDE * FINAL_SIDE * CHANNELS[3]))
            .expect("row-major feature map");
        let hidden_pre = self.fc1.forward(&flat.view());
        let hidden = relu(&hidden_pre);
        let logits = self.fc2.forward(&hidden.view());
        (
            logits,
            NetCache {
                convs,
                flat,
                hidden_pre,
                hidden,
                batch,
            },
        )
    }

    pub fn logits(&self, images: &Array2<T>) -> Array2<T> {
        self.forward(images).0
    }

    pub fn backward(&self, c: &NetCache<T>, dlogits: &ArrayView2<T>, g: &mut Self) {
        let dh = self.fc2.backward(&c.hidden.view(), dlogits, &mut g.fc2);
        let dh = relu_backward(&c.hidden_pre, &dh.view());
        let dflat = self.fc1.backward(&c.flat.view(), &dh.view(), &mut g.fc1);
        let side = FINAL_SIDE * FINAL_SIDE;
        let mut dx = dflat
            .into_shape_with_order((c.batch * side, CHANNELS[3]))
            .expect("row-major");
        for (k, conv) in self.convs.iter().enumerate().rev() {
            let (cache, pre) = &c.convs[k];
            let dpre = relu_backward(pre, &dx.view());
            if k == 0 {
                conv.backward_params(cache, &dpre.view(), &mut g.convs[0]);
            } else {
                dx = conv.backward(cache, &dpre.view(), &mut g.convs[k]);
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill_zero();
        g
    }
}

impl<T: Real> Params<T> for BlockListNet<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [T])) {
        for c in &self.convs {
            c.visit(f);
        }
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        for c in &mut self.convs {
            c.visit_mut(f);
        }
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}
