//! Training objectives: color l1, Laplacian-pyramid l1, and feature loss.
//! All reductions are sums.

use crate::codecs::{CodecError, TensorContainer};
use crate::context::ContextExtractor;
use crate::tensor::{kernels, Eval, Ops, Real, Scale, Tensor, TensorError};

/// Layers of the Laplacian loss: `LAP_LEVELS - 1` band-pass levels and the
/// low-pass residual as the last layer.
pub const LAP_LEVELS: usize = 5;
/// Spatial extents fed to [`lap_loss`] must be multiples of this.
pub const LAP_DIVISOR: usize = 1 << (LAP_LEVELS - 1);

pub fn l1_loss<T: Real, O: Ops<T>>(ops: &mut O, pred: &O::V, target: &O::V) -> Result<O::V, TensorError> {
    ops.l1(pred, target)
}

/// Band-pass levels `L^1..L^n` (finest first) and the low residual.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianPyramid<T> {
    pub levels: Vec<Tensor<T>>,
    pub residual: Tensor<T>,
}

fn check_divisible(op: &'static str, shape: &[usize], levels: usize) -> Result<(), TensorError> {
    let d = 1usize << levels;
    if shape.len() != 4 || !shape[2].is_multiple_of(d) || !shape[3].is_multiple_of(d) || shape[2] == 0 || shape[3] == 0 {
        return Err(TensorError::Shape { op, detail: format!("spatial size of {shape:?} must be a positive multiple of {d}") });
    }
    Ok(())
}

pub fn build_laplacian<T: Real>(img: &Tensor<T>, levels: usize) -> Result<LaplacianPyramid<T>, TensorError> {
    check_divisible("build_laplacian", img.shape(), levels)?;
    let mut g = img.clone();
    let mut bands = Vec::with_capacity(levels);
    for _ in 0..levels {
        let next = kernels::gauss_down(&g)?;
        let up = kernels::bilinear_resize(&next, Scale::Up2)?;
        bands.push(Tensor::new(g.shape().to_vec(), g.data().iter().zip(up.data()).map(|(&a, &b)| a - b).collect())?);
        g = next;
    }
    Ok(LaplacianPyramid { levels: bands, residual: g })
}

impl<T: Real> LaplacianPyramid<T> {
    pub fn reconstruct(&self) -> Result<Tensor<T>, TensorError> {
        let mut g = self.residual.clone();
        for band in self.levels.iter().rev() {
            let up = kernels::bilinear_resize(&g, Scale::Up2)?;
            g = Tensor::new(band.shape().to_vec(), band.data().iter().zip(up.data()).map(|(&a, &b)| a + b).collect())?;
        }
        Ok(g)
    }

    /// `sum_i 2^(i-1) |L^i(self) - L^i(other)|_1` over the bands followed by
    /// the residual as the last layer.
    pub fn weighted_l1(&self, other: &Self) -> Result<f64, TensorError> {
        let mut total = 0.0;
        let layers = self.levels.iter().chain([&self.residual]).zip(other.levels.iter().chain([&other.residual]));
        for (i, (a, b)) in layers.enumerate() {
            kernels::same_shape("lap_loss", a, b)?;
            let l1: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).sum();
            total += (1u64 << i) as f64 * l1;
        }
        Ok(total)
    }
}

/// Laplacian loss over five layers: four bands and the low-pass residual,
/// layer `i` weighted by `2^(i-1)`. Pyramid construction is linear, so the
/// layers of the difference are the differences of the layers.
pub fn lap_loss<T: Real, O: Ops<T>>(ops: &mut O, pred: &O::V, target: &O::V) -> Result<O::V, TensorError> {
    check_divisible("lap_loss", ops.value(pred).shape(), LAP_LEVELS - 1)?;
    let mut g = ops.sub(pred, target)?;
    let mut total: Option<O::V> = None;
    for i in 0..LAP_LEVELS {
        let (layer, next) = if i + 1 < LAP_LEVELS {
            let next = ops.gauss_down(&g)?;
            let up = ops.resize(&next, Scale::Up2)?;
            (ops.sub(&g, &up)?, Some(next))
        } else {
            (g.clone(), None)
        };
        let zero = ops.constant(Tensor::zeros(ops.value(&layer).shape()));
        let term = ops.l1(&layer, &zero)?;
        let term = ops.scale(&term, (1u64 << i) as f64)?;
        total = Some(match total {
            Some(t) => ops.add(&t, &term)?,
            None => term,
        });
        if let Some(n) = next {
            g = n;
        }
    }
    Ok(total.expect("at least one layer"))
}

/// A frozen differentiable map from images to features.
pub trait FeatureExtractor<T: Real> {
    fn extract<O: Ops<T>>(&self, ops: &mut O, x: &O::V) -> Result<O::V, TensorError>;
}

pub struct Identity;

impl<T: Real> FeatureExtractor<T> for Identity {
    fn extract<O: Ops<T>>(&self, _ops: &mut O, x: &O::V) -> Result<O::V, TensorError> {
        Ok(x.clone())
    }
}

impl<T: Real> FeatureExtractor<T> for ContextExtractor<T> {
    fn extract<O: Ops<T>>(&self, ops: &mut O, x: &O::V) -> Result<O::V, TensorError> {
        let p = self.params.bind_constants(ops);
        self.forward(ops, &p, x)
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
    pub relu: bool,
}

/// Sequential convolution stack read from `feat.<i>.weight`, `feat.<i>.bias`
/// and `feat.<i>.geom = [stride, pad, relu]` for `i = 0, 1, ...`.
#[derive(Clone, Debug)]
pub struct ConvStack<T> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Real> ConvStack<T> {
    pub fn load(c: &TensorContainer) -> Result<Self, CodecError> {
        let mut layers = Vec::new();
        while c.get(&format!("feat.{}.weight", layers.len())).is_some() {
            let i = layers.len();
            let weight: Tensor<T> = c.tensor(&format!("feat.{i}.weight"), None)?;
            let bias: Tensor<T> = c.tensor(&format!("feat.{i}.bias"), None)?;
            let geom = c.values(&format!("feat.{i}.geom"), 3)?;
            if weight.shape().len() != 4 || bias.shape() != [weight.shape()[0]] || geom[0] < 1.0 {
                return Err(CodecError::Container(format!("feature layer {i} is malformed")));
            }
            layers.push(ConvLayer { weight, bias, stride: geom[0] as usize, pad: geom[1] as usize, relu: geom[2] != 0.0 });
        }
        if layers.is_empty() {
            return Err(CodecError::Container("missing entry \"feat.0.weight\"".into()));
        }
        Ok(ConvStack { layers })
    }

    pub fn save(&self, c: &mut TensorContainer) -> Result<(), CodecError> {
        for (i, l) in self.layers.iter().enumerate() {
            c.push_tensor(format!("feat.{i}.weight"), &l.weight)?;
            c.push_tensor(format!("feat.{i}.bias"), &l.bias)?;
            c.push(format!("feat.{i}.geom"), vec![3], vec![l.stride as f32, l.pad as f32, l.relu as u8 as f32])?;
        }
        Ok(())
    }
}

impl<T: Real> FeatureExtractor<T> for ConvStack<T> {
    fn extract<O: Ops<T>>(&self, ops: &mut O, x: &O::V) -> Result<O::V, TensorError> {
        let mut y = x.clone();
        for l in &self.layers {
            let (w, b) = (ops.constant(l.weight.clone()), ops.constant(l.bias.clone()));
            y = ops.conv2d(&y, &w, Some(&b), l.stride, l.pad)?;
            if l.relu {
                y = ops.relu(&y)?;
            }
        }
        Ok(y)
    }
}

/// Feature extractors selectable at run time.
#[derive(Clone, Debug)]
pub enum FeatureNet<T> {
    Identity,
    Context(ContextExtractor<T>),
    Stack(ConvStack<T>),
}

impl<T: Real> FeatureExtractor<T> for FeatureNet<T> {
    fn extract<O: Ops<T>>(&self, ops: &mut O, x: &O::V) -> Result<O::V, TensorError> {
        match self {
            FeatureNet::Identity => Identity.extract(ops, x),
            FeatureNet::Context(c) => c.extract(ops, x),
            FeatureNet::Stack(s) => s.extract(ops, x),
        }
    }
}

/// `|phi(pred) - phi(target)|_2^2`.
pub fn feature_loss<T: Real, O: Ops<T>, F: FeatureExtractor<T>>(
    ops: &mut O,
    pred: &O::V,
    target: &O::V,
    phi: &F,
) -> Result<O::V, TensorError> {
    kernels::same_shape("feature_loss", ops.value(pred), ops.value(target))?;
    let a = phi.extract(ops, pred)?;
    let b = phi.extract(ops, target)?;
    ops.sq_err(&a, &b)
}

/// Scalar value of a loss on plain tensors.
pub fn evaluate_loss<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    f: impl FnOnce(&mut Eval, &std::sync::Arc<Tensor<T>>, &std::sync::Arc<Tensor<T>>) -> Result<std::sync::Arc<Tensor<T>>, TensorError>,
) -> Result<f64, TensorError> {
    let mut ops = Eval::new();
    let (p, t) = (ops.constant(pred.clone()), ops.constant(target.clone()));
    Ok(f(&mut ops, &p, &t)?.item().as_f64())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::gradcheck::check_gradients;
    use crate::tensor::{conv2d, ParamStore};

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn l1_examples() {
        let a = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 * 0.1);
        assert_eq!(evaluate_loss(&a, &a, l1_loss).unwrap(), 0.0);
        let mut b = a.clone();
        b.data_mut()[4] += 0.5;
        assert!((evaluate_loss(&b, &a, l1_loss).unwrap() - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, q) = (rand_tensor(&[2, 3, 5, 4], &mut rng), rand_tensor(&[2, 3, 5, 4], &mut rng));
        let oracle: f64 = p.data().iter().zip(q.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!((evaluate_loss(&p, &q, l1_loss).unwrap() - oracle).abs() < 1e-6);
        let r = rand_tensor(&[2, 3, 4, 4], &mut rng);
        assert!(evaluate_loss(&p, &r, l1_loss).is_err());
    }

    #[test]
    fn l1_subgradient_is_zero_at_ties() {
        let mut tape = crate::tensor::Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[1, 1, 1, 3], |i| i as f64), true);
        let y = tape.constant(Tensor::new(vec![1, 1, 1, 3], vec![0.0, 2.0, 1.0]).unwrap());
        let l = tape.l1(&x, &y).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.0, -1.0, 1.0]);
    }

    #[test]
    fn constant_image_has_empty_bands() {
        let img = Tensor::full(&[1, 3, 64, 64], 0.375f64);
        let p = build_laplacian(&img, 5).unwrap();
        assert!(p.levels.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
        assert_eq!(p.residual.shape(), &[1, 3, 2, 2]);
        assert!(p.residual.data().iter().all(|&v| v == 0.375));
        for (i, l) in p.levels.iter().enumerate() {
            assert_eq!(l.shape()[2], 64 >> i);
        }
    }

    #[test]
    fn pyramid_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = rand_tensor(&[1, 3, 64, 64], &mut rng).cast::<f32>();
        let p = build_laplacian(&img, 5).unwrap();
        assert!(p.reconstruct().unwrap().max_abs_diff(&img) < 1e-5);
        assert!(build_laplacian(&Tensor::<f32>::zeros(&[1, 3, 48, 64]), 5).is_err());
    }

    #[test]
    fn impulse_energy_concentrates_in_fine_band() {
        let mut img = Tensor::<f64>::zeros(&[1, 1, 64, 64]);
        img.data_mut()[32 * 64 + 32] = 1.0;
        let p = build_laplacian(&img, 5).unwrap();
        let energy = |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>();
        assert!(energy(&p.levels[0]) > energy(&p.levels[4]));
    }

    #[test]
    fn global_offsets_reach_only_the_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = rand_tensor(&[1, 3, 32, 32], &mut rng);
        assert_eq!(evaluate_loss(&t, &t, lap_loss).unwrap(), 0.0);
        let shifted = t.map(|v| v + 0.25);
        // 2x2 residual over 3 channels, weight 2^4.
        let value = evaluate_loss(&shifted, &t, lap_loss).unwrap();
        assert!((value - 16.0 * 0.25 * 12.0).abs() < 1e-9, "{value}");
        let (ps, pt) = (build_laplacian(&shifted, 4).unwrap(), build_laplacian(&t, 4).unwrap());
        for (a, b) in ps.levels.iter().zip(&pt.levels) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
    }

    #[test]
    fn lap_loss_matches_band_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (p, t) = (rand_tensor(&[2, 3, 32, 64], &mut rng), rand_tensor(&[2, 3, 32, 64], &mut rng));
        let value = evaluate_loss(&p, &t, lap_loss).unwrap();
        let (pp, tp) = (build_laplacian(&p, 4).unwrap(), build_laplacian(&t, 4).unwrap());
        let bands = pp.weighted_l1(&tp).unwrap();
        assert!((value - bands).abs() / bands < 1e-10);

        // Doubling the coarsest layer difference adds 16 times its l1 delta.
        let mut doubled = tp.clone();
        for (d, &q) in doubled.residual.data_mut().iter_mut().zip(pp.residual.data()) {
            *d = q - 2.0 * (q - *d);
        }
        let band5: f64 = pp.residual.data().iter().zip(tp.residual.data()).map(|(a, b)| (a - b).abs()).sum();
        let raised = pp.weighted_l1(&doubled).unwrap();
        assert!((raised - bands - 16.0 * band5).abs() < 1e-9 * raised);
    }

    #[test]
    fn lap_loss_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = rand_tensor(&[1, 2, 32, 32], &mut rng);
        let t = rand_tensor(&[1, 2, 32, 32], &mut rng);
        let report = check_gradients(
            std::slice::from_ref(&p),
            |tape, v| {
                let tt = tape.constant(t.clone());
                lap_loss(tape, &v[0], &tt)
            },
            1e-5,
            200,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn feature_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (p, t) = (rand_tensor(&[1, 3, 8, 8], &mut rng), rand_tensor(&[1, 3, 8, 8], &mut rng));
        assert_eq!(evaluate_loss(&p, &p, |o, a, b| feature_loss(o, a, b, &Identity)).unwrap(), 0.0);
        let sq: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((evaluate_loss(&p, &t, |o, a, b| feature_loss(o, a, b, &Identity)).unwrap() - sq).abs() < 1e-12);

        let ctx = ContextExtractor::<f64>::random(&mut rng);
        let value = evaluate_loss(&p, &t, |o, a, b| feature_loss(o, a, b, &ctx)).unwrap();
        let fa = conv2d(&p, ctx.weight(), Some(ctx.bias()), 1, 3).unwrap().map(|v| v.max(0.0));
        let fb = conv2d(&t, ctx.weight(), Some(ctx.bias()), 1, 3).unwrap().map(|v| v.max(0.0));
        let oracle: f64 = fa.data().iter().zip(fb.data()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((value - oracle).abs() < 1e-9 * oracle);
    }

    #[test]
    fn conv_stack_round_trip_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stack = ConvStack::<f64> {
            layers: vec![
                ConvLayer { weight: ParamStore::uniform(&[4, 3, 3, 3], 27, &mut rng), bias: ParamStore::uniform(&[4], 27, &mut rng), stride: 1, pad: 1, relu: true },
                ConvLayer { weight: ParamStore::uniform(&[5, 4, 3, 3], 36, &mut rng), bias: ParamStore::uniform(&[5], 36, &mut rng), stride: 2, pad: 1, relu: false },
            ],
        };
        let mut c = TensorContainer::new();
        stack.save(&mut c).unwrap();
        let back = ConvStack::<f64>::load(&c).unwrap();
        assert_eq!(back.layers.len(), 2);
        assert_eq!((back.layers[1].stride, back.layers[1].relu), (2, false));
        assert!(ConvStack::<f64>::load(&TensorContainer::new()).unwrap_err().to_string().contains("feat.0.weight"));

        let (p, t) = (rand_tensor(&[1, 3, 8, 8], &mut rng), rand_tensor(&[1, 3, 8, 8], &mut rng));
        let phi = FeatureNet::Stack(back.layers.iter().fold(ConvStack { layers: vec![] }, |mut s, l| {
            s.layers.push(ConvLayer { weight: l.weight.cast(), bias: l.bias.cast(), ..l.clone() });
            s
        }));
        let report = check_gradients(
            std::slice::from_ref(&p),
            |tape, v| {
                let tt = tape.constant(t.clone());
                feature_loss(tape, &v[0], &tt, &phi)
            },
            1e-5,
            100,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
