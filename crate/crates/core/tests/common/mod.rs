#![allow(dead_code)]

use fadeout::model::{enumerate_distribution, ModelParams, ModelShape};

/// Gauss-Hermite rule for the standard normal: `E[f(Z)] ~= sum w_k f(x_k)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Newton iteration on the physicists' Hermite polynomials, then rescale.
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pi4 = std::f64::consts::PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pi4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let s = std::f64::consts::PI.sqrt();
    (x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(), w.iter().map(|v| v / s).collect())
}

/// Tensor-product quadrature of `f(eps)` over `dim` independent standard normals.
pub fn normal_expectation(dim: usize, nodes: usize, mut f: impl FnMut(&[f64], f64)) {
    let (x, w) = gauss_hermite(nodes);
    let mut idx = vec![0usize; dim];
    let mut eps = vec![0.0; dim];
    loop {
        let mut weight = 1.0;
        for d in 0..dim {
            eps[d] = x[idx[d]];
            weight *= w[idx[d]];
        }
        f(&eps, weight);
        let mut d = 0;
        loop {
            if d == dim {
                return;
            }
            idx[d] += 1;
            if idx[d] < nodes {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// `E_{p~}[f]` and `E_{p~}[eps f]` for `theta = mu + sigma * eps`, by quadrature and enumeration.
pub fn extended_moments(shape: ModelShape, mu: &[f64], sigma: &[f64], nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let k = mu.len();
    let mut ef = vec![0.0; k];
    let mut eef = vec![0.0; k];
    normal_expectation(k, nodes, |eps, w| {
        let theta: Vec<f64> = (0..k).map(|i| mu[i] + sigma[i] * eps[i]).collect();
        let e = enumerate_distribution(&ModelParams::from_vec(shape, theta).unwrap())
            .unwrap()
            .expectations();
        for i in 0..k {
            ef[i] += w * e.as_slice()[i];
            eef[i] += w * eps[i] * e.as_slice()[i];
        }
    });
    (ef, eef)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let (x, w) = gauss_hermite(10);
        let m = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-12);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-10);
        assert!((m(6) - 15.0).abs() < 1e-9);
    }
}
