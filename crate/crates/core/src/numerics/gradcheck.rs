//! Central finite differences for checking analytic gradients at `f64`.

use super::{Graph, Tensor, Var};

/// Step used by the gradient-check harness.
pub const FD_STEP: f64 = 1e-5;
/// Floor on the relative-error denominator so exact zeros compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_differences(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, REL_FLOOR)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Checks `build` with respect to every input tensor. `build` receives the
/// input nodes and must return a scalar node.
pub fn check_graph_fn(inputs: &[Tensor<f64>], build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).expect("scalar output");
    let mut worst = 0.0f64;
    for (idx, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[idx]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        let numeric = central_differences(
            |x| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == idx {
                            g.variable(Tensor::new(t.shape().to_vec(), x.to_vec()))
                        } else {
                            g.variable(t.clone())
                        }
                    })
                    .collect();
                let out = build(&mut g, &vars);
                g.value(out).item()
            },
            t.data(),
            FD_STEP,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}
