//! Central finite differences on `R^{2n}`.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::hermitian::CPoint;

/// Default oracle fallback step, `1e-5 * (1 + |z|)`.
pub fn default_step(z: &CPoint) -> f64 {
    1e-5 * (1.0 + z.norm())
}

fn unit(dim: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(dim);
    e[i] = 1.0;
    e
}

pub fn gradient<F>(f: F, z: &CPoint, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&CPoint) -> Result<f64>,
{
    let m = z.real().len();
    let mut g = DVector::zeros(m);
    for i in 0..m {
        let e = unit(m, i);
        let fp = f(&z.offset(&e, h))?;
        let fm = f(&z.offset(&e, -h))?;
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Hessian from second differences of a scalar function.
pub fn hessian<F>(f: F, z: &CPoint, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&CPoint) -> Result<f64>,
{
    let m = z.real().len();
    let f0 = f(z)?;
    let mut hess = DMatrix::zeros(m, m);
    for i in 0..m {
        let ei = unit(m, i);
        let fp = f(&z.offset(&ei, h))?;
        let fm = f(&z.offset(&ei, -h))?;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in (i + 1)..m {
            let ej = unit(m, j);
            let pp = f(&z.offset(&(&ei + &ej), h))?;
            let pm = f(&z.offset(&(&ei - &ej), h))?;
            let mp = f(&z.offset(&(&ej - &ei), h))?;
            let mm = f(&z.offset(&(&ei + &ej), -h))?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Jacobian `J_ij = d f_i / d x_j` of a vector-valued map.
pub fn jacobian<F>(f: F, z: &CPoint, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&CPoint) -> Result<DVector<f64>>,
{
    let m = z.real().len();
    let mut cols = Vec::with_capacity(m);
    for j in 0..m {
        let e = unit(m, j);
        let fp = f(&z.offset(&e, h))?;
        let fm = f(&z.offset(&e, -h))?;
        cols.push((fp - fm) / (2.0 * h));
    }
    let rows = cols.first().map(|c| c.len()).unwrap_or(0);
    Ok(DMatrix::from_fn(rows, m, |i, j| cols[j][i]))
}

/// Symmetrised Jacobian of a gradient map.
pub fn hessian_from_gradient<F>(grad: F, z: &CPoint, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&CPoint) -> Result<DVector<f64>>,
{
    let j = jacobian(grad, z, h)?;
    Ok((&j + j.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let z = CPoint::new(vec![0.3, -0.2, 0.1, 0.5]).unwrap();
        let f = |p: &CPoint| -> Result<f64> {
            let x = p.real();
            Ok(x[0] * x[0] + 3.0 * x[1] * x[2] - x[3] * x[3])
        };
        let h = hessian(f, &z, 1e-3).unwrap();
        assert!((h[(0, 0)] - 2.0).abs() < 1e-8);
        assert!((h[(1, 2)] - 3.0).abs() < 1e-8);
        assert!((h[(3, 3)] + 2.0).abs() < 1e-8);
        let g = gradient(f, &z, 1e-4).unwrap();
        assert!((g[1] - 0.3).abs() < 1e-9);
    }
}
