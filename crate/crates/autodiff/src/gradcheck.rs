//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward rules it is checking.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Denominator floor for relative errors; below this magnitude a gradient
/// is compared absolutely (scaled by the floor).
pub const RELATIVE_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (input index, element index) of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    /// Check at most this many evenly spaced elements per input.
    pub max_elements: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            max_elements: None,
        }
    }
}

impl GradCheck {
    /// Compares backward gradients of the scalar built by `build` against
    /// central differences for every input tensor (all treated as trainable).
    pub fn run<F>(&self, inputs: &[Tensor], build: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let eval = |vals: &[Tensor]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
            let out = build(&mut g, &vars)?;
            g.value(out).item()
        };

        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        g.backward(loss)?;
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .map(|&v| g.grad(v).map(<[f64]>::to_vec))
            .collect::<Option<_>>()
            .ok_or_else(|| TensorError::Contract("input without gradient".into()))?;

        let mut report = GradCheckReport {
            max_relative_error: 0.0,
            worst: (0, 0),
            checked: 0,
        };
        let mut probe = inputs.to_vec();
        for (ti, tensor) in inputs.iter().enumerate() {
            let n = tensor.numel();
            let stride = match self.max_elements {
                Some(m) if m > 0 && n > m => n.div_ceil(m),
                _ => 1,
            };
            for e in (0..n).step_by(stride) {
                let orig = tensor.data()[e];
                probe[ti].data_mut()[e] = orig + self.step;
                let plus = eval(&probe)?;
                probe[ti].data_mut()[e] = orig - self.step;
                let minus = eval(&probe)?;
                probe[ti].data_mut()[e] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                let err = relative_error(analytic[ti][e], numeric);
                if err > report.max_relative_error || !err.is_finite() {
                    report.max_relative_error = err;
                    report.worst = (ti, e);
                }
                report.checked += 1;
            }
        }
        Ok(report)
    }
}

/// One differentiable op wrapped into a scalar objective for checking.
pub struct OpCase {
    pub name: &'static str,
    pub input_shapes: Vec<Vec<usize>>,
    pub build: fn(&mut Graph, &[Var]) -> Result<Var>,
}

/// Reduces `x` to a scalar with fixed, non-uniform weights so that ops whose
/// plain sum is constant (softmax, layer norm) still get a useful gradient.
pub fn weighted_sum(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| (0.7 * i as f64 + 0.3).sin()).collect();
    let w = g.constant(Tensor::new(shape, w)?);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

/// Every differentiable graph op, each with representative input shapes.
pub fn op_catalog() -> Vec<OpCase> {
    fn case(
        name: &'static str,
        shapes: &[&[usize]],
        build: fn(&mut Graph, &[Var]) -> Result<Var>,
    ) -> OpCase {
        OpCase {
            name,
            input_shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            build,
        }
    }
    vec![
        case("matmul", &[&[3, 4], &[4, 2]], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y)
        }),
        case("bmm", &[&[2, 3, 4], &[2, 4, 2]], |g, v| {
            let y = g.bmm(v[0], v[1], false)?;
            weighted_sum(g, y)
        }),
        case("bmm_trans_b", &[&[2, 3, 4], &[2, 5, 4]], |g, v| {
            let y = g.bmm(v[0], v[1], true)?;
            weighted_sum(g, y)
        }),
        case("add", &[&[2, 3], &[2, 3]], |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y)
        }),
        case("sub", &[&[2, 3], &[2, 3]], |g, v| {
            let y = g.sub(v[0], v[1])?;
            weighted_sum(g, y)
        }),
        case("mul", &[&[2, 3], &[2, 3]], |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y)
        }),
        case("add_broadcast", &[&[2, 2, 3], &[3]], |g, v| {
            let y = g.add_broadcast(v[0], v[1])?;
            weighted_sum(g, y)
        }),
        case("mul_broadcast", &[&[4, 3], &[3]], |g, v| {
            let y = g.mul_broadcast(v[0], v[1])?;
            weighted_sum(g, y)
        }),
        case("scale", &[&[5]], |g, v| {
            let y = g.scale(v[0], -1.7);
            weighted_sum(g, y)
        }),
        case("relu", &[&[3, 4]], |g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y)
        }),
        case("softmax_last", &[&[3, 5]], |g, v| {
            let y = g.softmax(v[0], 1)?;
            weighted_sum(g, y)
        }),
        case("softmax_first", &[&[4, 3]], |g, v| {
            let y = g.softmax(v[0], 0)?;
            weighted_sum(g, y)
        }),
        case("softmax_masked", &[&[2, 3, 3]], |g, v| {
            let band = [true, true, false, true, true, true, false, true, true];
            let y = g.softmax_masked(v[0], &band)?;
            weighted_sum(g, y)
        }),
        case("layer_norm", &[&[3, 6]], |g, v| {
            let y = g.layer_norm(v[0]);
            weighted_sum(g, y)
        }),
        case("sum", &[&[2, 3]], |g, v| {
            let y = g.sum(v[0]);
            g.mul(y, y)
        }),
        case("mean", &[&[2, 3]], |g, v| {
            let y = g.mean(v[0]);
            g.mul(y, y)
        }),
        case("mean_axis", &[&[2, 3, 4]], |g, v| {
            let y = g.mean_axis(v[0], 1)?;
            weighted_sum(g, y)
        }),
        case("concat", &[&[2, 1, 3], &[2, 2, 3]], |g, v| {
            let y = g.concat(&[v[0], v[1]], 1)?;
            weighted_sum(g, y)
        }),
        case("narrow", &[&[3, 5]], |g, v| {
            let y = g.narrow(v[0], 1, 1, 3)?;
            weighted_sum(g, y)
        }),
        case("reshape", &[&[2, 6]], |g, v| {
            let y = g.reshape(v[0], &[3, 4])?;
            weighted_sum(g, y)
        }),
        case("permute", &[&[2, 3, 4]], |g, v| {
            let y = g.permute(v[0], &[2, 0, 1])?;
            weighted_sum(g, y)
        }),
        case("gather_rows", &[&[4, 3]], |g, v| {
            let y = g.gather_rows(v[0], &[3, 0, 3, 1])?;
            weighted_sum(g, y)
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_gradient() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.0]).unwrap();
        let r = GradCheck::default()
            .run(&[x], |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            })
            .unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-5).abs() < 1e-18);
    }
}
