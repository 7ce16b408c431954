//! Finite-difference helpers: a central-difference gradient oracle and a
//! Hessian-vector product built from two gradient evaluations.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Central-difference gradient estimate, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(CoreError::Contract("finite_diff_grad requires h > 0".into()));
    }
    let mut grad = Tensor::zeros_like(x);
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        let d = (fp - fm) / (2.0 * h);
        if !d.is_finite() {
            return Err(CoreError::NumericOverflow { op: "finite_diff_grad" });
        }
        grad.data_mut()[i] = d;
    }
    Ok(grad)
}

/// Step size for [`hvp_fd`] scaled to the magnitude of the point.
pub fn default_hvp_eps(point: &Tensor) -> f64 {
    1e-4 * (1.0 + point.inf_norm())
}

/// Hessian-vector product by central differences of the gradient:
/// `(∇f(x + eps·v) − ∇f(x − eps·v)) / (2·eps)`, an O(eps²) estimate.
///
/// `loss_grad` evaluates the loss and its exact gradient at a point.
pub fn hvp_fd<F>(mut loss_grad: F, point: &Tensor, vector: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    if eps <= 0.0 {
        return Err(CoreError::Contract("hvp_fd requires eps > 0".into()));
    }
    if !point.same_shape(vector) {
        return Err(CoreError::ShapeMismatch {
            op: "hvp_fd",
            left: point.shape().to_vec(),
            right: vector.shape().to_vec(),
        });
    }
    let plus = point.axpy(eps, vector)?;
    let minus = point.axpy(-eps, vector)?;
    let (_, gp) = loss_grad(&plus)?;
    let (_, gm) = loss_grad(&minus)?;
    let hv = gp.axpy(-1.0, &gm)?.scale(1.0 / (2.0 * eps))?;
    hv.check_finite("hvp_fd")?;
    Ok(hv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_squared_norm() {
        // f(x) = ||x||^2 at (1, 2) -> (2, 4)
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(
            |t| Ok(t.data().iter().map(|v| v * v).sum()),
            &x,
            1e-5,
        )
        .unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let x = Tensor::vector(vec![0.3, -0.4, 7.0]).unwrap();
        let g = finite_diff_grad(|_| Ok(5.0), &x, 1e-5).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn hvp_of_quadratic_is_identity_times_v() {
        // f(x) = 0.5 ||x||^2 has identity Hessian
        let f = |x: &Tensor| {
            let v: f64 = x.data().iter().map(|v| 0.5 * v * v).sum();
            Ok((v, x.clone()))
        };
        let p = Tensor::vector(vec![3.0, -1.0]).unwrap();
        let v = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let hv = hvp_fd(f, &p, &v, 1e-4).unwrap();
        assert!((hv.data()[0] - 1.0).abs() < 1e-8);
        assert!(hv.data()[1].abs() < 1e-8);
    }

    #[test]
    fn hvp_of_cubic_matches_analytic_hessian() {
        // f(x) = x1^2 x2 at (1,1): H = [[2x2, 2x1], [2x1, 0]]; H (1,0) = (2,2)
        let f = |x: &Tensor| {
            let (a, b) = (x.data()[0], x.data()[1]);
            let g = Tensor::vector(vec![2.0 * a * b, a * a]).unwrap();
            Ok((a * a * b, g))
        };
        let p = Tensor::vector(vec![1.0, 1.0]).unwrap();
        let v = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let hv = hvp_fd(f, &p, &v, 1e-4).unwrap();
        assert!((hv.data()[0] - 2.0).abs() < 1e-6);
        assert!((hv.data()[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn hvp_of_general_quadratic_matches_direct_multiply() {
        // f(x) = 0.5 x^T A x with symmetric A: H v = A v
        let a = [[2.0, 0.5, -1.0], [0.5, 3.0, 0.25], [-1.0, 0.25, 1.5]];
        let f = move |x: &Tensor| {
            let xs = x.data();
            let ax: Vec<f64> = (0..3)
                .map(|i| (0..3).map(|j| a[i][j] * xs[j]).sum())
                .collect();
            let val = 0.5 * xs.iter().zip(&ax).map(|(x, y)| x * y).sum::<f64>();
            Ok((val, Tensor::vector(ax).unwrap()))
        };
        let p = Tensor::vector(vec![0.3, -0.8, 1.1]).unwrap();
        let v = Tensor::vector(vec![1.0, 2.0, -0.5]).unwrap();
        let hv = hvp_fd(f, &p, &v, default_hvp_eps(&p)).unwrap();
        let expect: [f64; 3] = [
            2.0 * 1.0 + 0.5 * 2.0 + -1.0 * -0.5,
            0.5 * 1.0 + 3.0 * 2.0 + 0.25 * -0.5,
            -1.0 * 1.0 + 0.25 * 2.0 + 1.5 * -0.5,
        ];
        for (&h, &e) in hv.data().iter().zip(&expect) {
            let denom = e.abs().max(1.0);
            assert!((h - e).abs() / denom < 1e-6, "{h} vs {e}");
        }
    }
}
