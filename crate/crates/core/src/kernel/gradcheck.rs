use super::Param;

/// Anything exposing a flat list of trainable parameters. The two accessors
/// must enumerate the same parameters in the same order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
}

impl Parameterized for Vec<Param> {
    fn params(&self) -> Vec<&Param> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.iter_mut().collect()
    }
}

/// Central-difference gradient of `loss` with respect to every coordinate of
/// every parameter: (f(θ+h) − f(θ−h)) / 2h. Values are restored exactly after
/// each probe. Returns one gradient vector per parameter, in `params()` order.
///
/// This is the independent oracle used to audit the hand-written backward
/// passes; it never calls any of them.
pub fn finite_diff_grad<M, F>(model: &mut M, mut loss: F, h: f64) -> Vec<Vec<f64>>
where
    M: Parameterized + ?Sized,
    F: FnMut(&M) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    for (pi, &n) in sizes.iter().enumerate() {
        for k in 0..n {
            let original = model.params()[pi].value.data()[k];
            model.params_mut()[pi].value.data_mut()[k] = original + h;
            let plus = loss(model);
            model.params_mut()[pi].value.data_mut()[k] = original - h;
            let minus = loss(model);
            model.params_mut()[pi].value.data_mut()[k] = original;
            grads[pi][k] = (plus - minus) / (2.0 * h);
        }
    }
    grads
}

/// Largest elementwise relative error between two gradients, with the
/// denominator floored at 1e-4 so near-zero coordinates are compared on an
/// absolute scale instead of blowing up the ratio.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{sigmoid, DenseMatrix};

    fn scalar(value: f64) -> Vec<Param> {
        vec![Param::new(
            "theta",
            DenseMatrix::from_vec(1, 1, vec![value]).unwrap(),
            0.0,
        )]
    }

    #[test]
    fn quadratic_is_exact_for_central_differences() {
        let mut p = scalar(3.0);
        let grads = finite_diff_grad(
            &mut p,
            |ps| {
                let v = ps[0].value.at(0, 0);
                v * v
            },
            1e-5,
        );
        assert!((grads[0][0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut p = scalar(1.7);
        let grads = finite_diff_grad(&mut p, |_| 42.0, 1e-5);
        assert_eq!(grads[0][0], 0.0);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        // σ'(0) = σ(0)(1−σ(0)) = 0.25
        let mut p = scalar(0.0);
        let grads = finite_diff_grad(&mut p, |ps| sigmoid(ps[0].value.at(0, 0)), 1e-5);
        assert!((grads[0][0] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floor_guards_tiny_coordinates() {
        assert!(max_relative_error(&[0.0], &[1e-12]) < 1e-7);
        assert!(max_relative_error(&[1.0], &[1.1]) > 0.09);
    }
}
