use crate::tensor::kernels::{channel_affine, joint_stats};
use crate::tensor::{Real, Tensor, TensorError};

/// Per-(sample, channel) statistics shared by a pair of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn instance_normalize_pair<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, NormStats), TensorError> {
    let (mean, std) = joint_stats(a, b)?;
    let neg_mean: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| -m / s).collect();
    let inv: Vec<f64> = std.iter().map(|s| 1.0 / s).collect();
    let an = channel_affine(a, &inv, &neg_mean)?;
    let bn = channel_affine(b, &inv, &neg_mean)?;
    Ok((an, bn, NormStats { mean, std }))
}

/// `x * std + mean`.
pub fn denormalize<T: Real>(x: &Tensor<T>, s: &NormStats) -> Result<Tensor<T>, TensorError> {
    channel_affine(x, &s.std, &s.mean)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::kernels::NORM_STD_FLOOR;

    #[test]
    fn constant_pair_normalizes_to_zero() {
        let a = Tensor::full(&[1, 2, 3, 3], 0.4f64);
        let (an, bn, s) = instance_normalize_pair(&a, &a).unwrap();
        assert!(an.data().iter().chain(bn.data()).all(|&v| v.abs() < 1e-9));
        assert!(s.mean.iter().all(|&m| (m - 0.4).abs() < 1e-15));
        assert!(s.std.iter().all(|&v| v == NORM_STD_FLOOR));
        // Flooring bounds the round-trip residual.
        let back = denormalize(&an, &s).unwrap();
        assert!(back.max_abs_diff(&a) <= NORM_STD_FLOOR);
    }

    #[test]
    fn antisymmetric_pair_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::from_fn(&[1, 3, 4, 4], |_| rng.random_range(-1.0..1.0f64));
        let b = a.map(|v| -v);
        let (an, bn, s) = instance_normalize_pair(&a, &b).unwrap();
        assert!(s.mean.iter().all(|m| m.abs() < 1e-15));
        for (x, y) in a.data().iter().zip(an.data()).take(16) {
            assert!((x / s.std[0] - y).abs() < 1e-12);
        }
        assert!(an.max_abs_diff(&bn.map(|v| -v)) < 1e-15);
    }

    #[test]
    fn union_is_standardized_and_invertible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::from_fn(&[2, 3, 5, 4], |_| rng.random_range(0.0..1.0f64));
        let b = Tensor::from_fn(&[2, 3, 5, 4], |_| rng.random_range(0.2..0.9f64));
        let (an, bn, s) = instance_normalize_pair(&a, &b).unwrap();
        for k in 0..6 {
            let vals: Vec<f64> = an.data()[k * 20..(k + 1) * 20].iter().chain(&bn.data()[k * 20..(k + 1) * 20]).copied().collect();
            let m = vals.iter().sum::<f64>() / 40.0;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 40.0).sqrt();
            assert!(m.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6);
        }
        assert!(denormalize(&an, &s).unwrap().max_abs_diff(&a) < 1e-6);
        let z = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let out = denormalize(&z, &NormStats { mean: vec![0.3], std: vec![1.0] }).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.3));
        assert!(denormalize(&z, &s).is_err());
        assert!(instance_normalize_pair(&Tensor::<f64>::zeros(&[1, 1, 0, 2]), &Tensor::zeros(&[1, 1, 0, 2])).is_err());
    }
}
