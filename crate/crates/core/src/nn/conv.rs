use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use super::{Linear, Params, Real};

/// Spatial layout of a feature map stored as a (batch * height * width,
/// channels) matrix, rows in (b, y, x) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvShape {
    pub fn rows(&self) -> usize {
        self.batch * self.height * self.width
    }
}

/// 3x3 convolution, stride 2, zero padding 1, via im2col.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// Weights as a (9 * in_channels, out_channels) matrix; row index is
    /// (ky * 3 + kx) * in_channels + c.
    pub kernel: Linear<T>,
    pub in_channels: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Array2<T>,
    input: ConvShape,
}

const K: usize = 3;
const STRIDE: usize = 2;

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        Self {
            kernel: Linear::new(K * K * in_channels, out_channels, rng),
            in_channels,
        }
    }

    pub fn output_shape(input: ConvShape) -> ConvShape {
        ConvShape {
            batch: input.batch,
            height: (input.height + 2 - K) / STRIDE + 1,
            width: (input.width + 2 - K) / STRIDE + 1,
        }
    }

    /// Visit (output row, column block offset, input row) for every
    /// in-bounds tap.
    fn taps(input: ConvShape, mut f: impl FnMut(usize, usize, usize)) {
        let out = Self::output_shape(input);
        for b in 0..input.batch {
            for oy in 0..out.height {
                for ox in 0..out.width {
                    let orow = (b * out.height + oy) * out.width + ox;
                    for ky in 0..K {
                        let iy = (oy * STRIDE + ky) as isize - 1;
                        if iy < 0 || iy >= input.height as isize {
                            continue;
                        }
                        for kx in 0..K {
                            let ix = (ox * STRIDE + kx) as isize - 1;
                            if ix < 0 || ix >= input.width as isize {
                                continue;
                            }
                            let irow = (b * input.height + iy as usize) * input.width + ix as usize;
                            f(orow, ky * K + kx, irow);
                        }
                    }
                }
            }
        }
    }

    pub fn forward(
        &self,
        x: &ArrayView2<T>,
        input: ConvShape,
    ) -> (Array2<T>, ConvShape, ConvCache<T>) {
        assert_eq!(x.dim(), (input.rows(), self.in_channels));
        let out = Self::output_shape(input);
        let c = self.in_channels;
        let mut cols = Array2::zeros((out.rows(), K * K * c));
        Self::taps(input, |orow, tap, irow| {
            cols.row_mut(orow)
                .slice_mut(ndarray::s![tap * c..(tap + 1) * c])
                .assign(&x.row(irow));
        });
        let y = self.kernel.forward(&cols.view());
        (y, out, ConvCache { cols, input })
    }

    pub fn backward(&self, cache: &ConvCache<T>, dy: &ArrayView2<T>, g: &mut Self) -> Array2<T> {
        let dcols = self.kernel.backward(&cache.cols.view(), dy, &mut g.kernel);
        self.col2im(&dcols, cache.input)
    }

    pub fn backward_params(&self, cache: &ConvCache<T>, dy: &ArrayView2<T>, g: &mut Self) {
        self.kernel
            .backward_params(&cache.cols.view(), dy, &mut g.kernel);
    }

    fn col2im(&self, dcols: &Array2<T>, input: ConvShape) -> Array2<T> {
        let c = self.in_channels;
        let mut dx = Array2::zeros((input.rows(), c));
        Self::taps(input, |orow, tap, irow| {
            let src = dcols.row(orow);
            let mut dst = dx.row_mut(irow);
            for k in 0..c {
                dst[k] += src[tap * c + k];
            }
        });
        dx
    }

    pub fn bias(&self) -> &Array1<T> {
        &self.kernel.b
    }
}

impl<T: Real> Params<T> for Conv2d<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [T])) {
        self.kernel.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.kernel.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::randn;
    use crate::nn::tests::max_grad_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_halves_even_inputs() {
        let s = ConvShape {
            batch: 2,
            height: 64,
            width: 64,
        };
        assert_eq!(
            Conv2d::<f32>::output_shape(s),
            ConvShape {
                batch: 2,
                height: 32,
                width: 32
            }
        );
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let input = ConvShape {
            batch: 2,
            height: 5,
            width: 4,
        };
        let conv = Conv2d::<f64>::new(3, 2, &mut rng);
        let x: Array2<f64> = randn((input.rows(), 3), 1.0, &mut rng);
        let (y, out, _) = conv.forward(&x.view(), input);
        let at = |b: usize, yy: isize, xx: isize, c: usize| {
            if yy < 0 || xx < 0 || yy >= 5 || xx >= 4 {
                0.0
            } else {
                x[[(b * 5 + yy as usize) * 4 + xx as usize, c]]
            }
        };
        for b in 0..2 {
            for oy in 0..out.height {
                for ox in 0..out.width {
                    for o in 0..2 {
                        let mut acc = conv.kernel.b[o];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                for c in 0..3 {
                                    let v = at(
                                        b,
                                        (2 * oy + ky) as isize - 1,
                                        (2 * ox + kx) as isize - 1,
                                        c,
                                    );
                                    acc += v * conv.kernel.w[[(ky * 3 + kx) * 3 + c, o]];
                                }
                            }
                        }
                        let row = (b * out.height + oy) * out.width + ox;
                        assert!((y[[row, o]] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = ConvShape {
            batch: 1,
            height: 4,
            width: 4,
        };
        let conv = Conv2d::<f64>::new(2, 3, &mut rng);
        let x: Array2<f64> = randn((input.rows(), 2), 1.0, &mut rng);
        let w: Array2<f64> = randn((4, 3), 1.0, &mut rng);
        let loss = |c: &Conv2d<f64>| (c.forward(&x.view(), input).0 * &w).sum();
        let (_, _, cache) = conv.forward(&x.view(), input);
        let mut g = conv.clone();
        g.fill_zero();
        let dx = conv.backward(&cache, &w.view(), &mut g);
        assert!(max_grad_error(&conv, &g, loss) < 1e-6);
        let h = 1e-6;
        let mut xp = x.clone();
        xp[[5, 1]] += h;
        let up = (conv.forward(&xp.view(), input).0 * &w).sum();
        xp[[5, 1]] -= 2.0 * h;
        let down = (conv.forward(&xp.view(), input).0 * &w).sum();
        assert!(((up - down) / (2.0 * h) - dx[[5, 1]]).abs() < 1e-6);
    }
}
