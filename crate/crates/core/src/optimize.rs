//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems with
//! a central finite-difference Jacobian.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub relative_cost_tolerance: f64,
    /// Stop when the proposed step is shorter than this.
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_cost_tolerance: 1e-12,
            step_tolerance: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost at the start and after every accepted step.
    pub accepted_costs: Vec<f64>,
}

fn cost_of(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// Central-difference Jacobian, one column per parameter.
pub fn jacobian<F>(residuals: &F, x: &[f64], steps: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = residuals(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut probe = x.to_vec();
    for (j, &h) in steps.iter().enumerate() {
        probe[j] = x[j] + h;
        let plus = residuals(&probe);
        probe[j] = x[j] - h;
        let minus = residuals(&probe);
        probe[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Minimizes `Σ rᵢ(x)²` from `x0`. `steps` holds the finite-difference step
/// per parameter. Damping is divided by 10 after an accepted step and
/// multiplied by 10 after a rejected one.
pub fn minimize<F>(residuals: F, x0: &[f64], steps: &[f64], opts: &LmOptions) -> LmReport
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    assert_eq!(
        x0.len(),
        steps.len(),
        "one finite-difference step per parameter"
    );
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut r = DVector::from_vec(residuals(x.as_slice()));
    let mut cost = cost_of(&r);
    let mut damping = opts.initial_damping;
    let mut accepted_costs = vec![cost];
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let jac = jacobian(&residuals, x.as_slice(), steps);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let scale_floor = 1e-12 * jtj.diagonal().max().max(f64::MIN_POSITIVE);

        // Inner loop: raise the damping until a step lowers the cost or
        // becomes negligible.
        loop {
            let mut lhs = jtj.clone();
            for k in 0..n {
                lhs[(k, k)] += damping * jtj[(k, k)].max(scale_floor);
            }
            let step = match lhs.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    damping *= 10.0;
                    if damping > 1e20 {
                        converged = true;
                        break;
                    }
                    continue;
                }
            };
            if step.norm() < opts.step_tolerance {
                converged = true;
                break;
            }
            let candidate = &x + &step;
            let r_new = DVector::from_vec(residuals(candidate.as_slice()));
            let cost_new = cost_of(&r_new);
            if cost_new < cost {
                let relative = (cost - cost_new) / cost;
                x = candidate;
                r = r_new;
                cost = cost_new;
                accepted_costs.push(cost);
                damping = (damping / 10.0).max(1e-15);
                if relative < opts.relative_cost_tolerance || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
            iterations += 1;
            if iterations >= opts.max_iterations {
                break;
            }
        }
    }

    LmReport {
        params: x.as_slice().to_vec(),
        cost,
        iterations,
        converged,
        accepted_costs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_fit() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * (-1.3 * x).exp() + 0.2).collect();
        let res = |p: &[f64]| -> Vec<f64> {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| p[0] * (-p[1] * x).exp() + p[2] - y)
                .collect()
        };
        let rep = minimize(res, &[1.0, 0.5, 0.0], &[1e-6; 3], &LmOptions::default());
        assert!(rep.converged);
        assert!((rep.params[0] - 2.5).abs() < 1e-8);
        assert!((rep.params[1] - 1.3).abs() < 1e-8);
        assert!((rep.params[2] - 0.2).abs() < 1e-8);
        assert!(rep.accepted_costs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rosenbrock() {
        let res = |p: &[f64]| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]];
        let rep = minimize(res, &[-1.2, 1.0], &[1e-6; 2], &LmOptions::default());
        assert!(rep.converged);
        assert!((rep.params[0] - 1.0).abs() < 1e-8);
        assert!((rep.params[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn fixed_point_takes_no_step() {
        let res = |p: &[f64]| vec![p[0] - 3.0, 2.0 * (p[1] + 1.0)];
        let rep = minimize(res, &[3.0, -1.0], &[1e-6; 2], &LmOptions::default());
        assert!(rep.converged);
        assert_eq!(rep.params, vec![3.0, -1.0]);
        assert!(rep.iterations <= 1);
    }

    #[test]
    fn iteration_cap() {
        let res = |p: &[f64]| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]];
        let opts = LmOptions {
            max_iterations: 2,
            ..Default::default()
        };
        let rep = minimize(res, &[-1.2, 1.0], &[1e-6; 2], &opts);
        assert!(!rep.converged);
        assert!(rep.iterations <= 2);
    }
}
