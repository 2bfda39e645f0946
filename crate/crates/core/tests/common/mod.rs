//! Shared helpers for the integration suites: finite-difference gradient
//! oracles (independent of the backward pass) and exhaustive vertex
//! enumeration for small LPs (independent of the simplex).

#![allow(dead_code)]

use minmax_measure::autodiff::{Parameter, Tape};
use minmax_measure::nets::Mlp;
use minmax_measure::rng::Stream;

/// Central finite differences of `loss` in every parameter of `mlp`,
/// step 1e-5. `loss` must evaluate the objective off the current weights.
pub fn finite_difference_grads(
    mlp: &mut Mlp,
    loss: &mut dyn FnMut(&Mlp) -> f64,
    step: f64,
) -> Vec<Vec<f64>> {
    let mut grads = Vec::new();
    for layer_idx in 0..mlp.layers.len() {
        for which in 0..2 {
            let len = {
                let p = pick(&mut mlp.layers[layer_idx], which);
                p.value.len()
            };
            let mut g = vec![0.0; len];
            for k in 0..len {
                let original = {
                    let p = pick(&mut mlp.layers[layer_idx], which);
                    p.value.data()[k]
                };
                set(mlp, layer_idx, which, k, original + step);
                let up = loss(mlp);
                set(mlp, layer_idx, which, k, original - step);
                let down = loss(mlp);
                set(mlp, layer_idx, which, k, original);
                g[k] = (up - down) / (2.0 * step);
            }
            grads.push(g);
        }
    }
    grads
}

fn pick(layer: &mut minmax_measure::nets::DenseLayer, which: usize) -> &mut Parameter {
    if which == 0 {
        &mut layer.weight
    } else {
        &mut layer.bias
    }
}

fn set(mlp: &mut Mlp, layer: usize, which: usize, k: usize, v: f64) {
    pick(&mut mlp.layers[layer], which).value.data_mut()[k] = v;
}

/// |a − b| ≤ rel·max(|a|, |b|) + floor, the floor covering finite-difference
/// cancellation noise.
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + floor
}

/// Gradients from a backward pass through a freshly built graph.
pub fn backward_grads(
    mlp: &Mlp,
    build: &mut dyn FnMut(&mut Tape, &minmax_measure::nets::BoundMlp) -> minmax_measure::autodiff::NodeId,
) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let (bound, slots) = mlp.bind(&mut tape);
    let loss = build(&mut tape, &bound);
    let grads = tape.backward(loss).expect("backward");
    slots.iter().map(|&s| grads.slot(s).data().to_vec()).collect()
}

/// Batch of rows avoiding ReLU kinks: resamples until every hidden
/// pre-activation is at least `margin` away from zero.
pub fn kink_free_batch(
    mlp: &Mlp,
    rows: usize,
    rng: &mut Stream,
    margin: f64,
) -> minmax_measure::autodiff::Array {
    let dim = mlp.config.input_dim;
    'outer: for _ in 0..200 {
        let data: Vec<f64> = (0..rows * dim).map(|_| rng.normal()).collect();
        let batch = minmax_measure::autodiff::Array::matrix(rows, dim, data).expect("sized");
        // Forward through hidden layers, checking pre-activations.
        let mut cur = batch.clone();
        for (li, layer) in mlp.layers.iter().enumerate() {
            if li + 1 == mlp.layers.len() {
                break;
            }
            let (out, inp) = layer.weight.value.dims2();
            let w = layer.weight.value.data();
            let b = layer.bias.value.data();
            let n = cur.shape()[0];
            let mut next = vec![0.0; n * out];
            for i in 0..n {
                for o in 0..out {
                    let mut acc = b[o];
                    for k in 0..inp {
                        acc += cur.row(i)[k] * w[o * inp + k];
                    }
                    if acc.abs() < margin {
                        continue 'outer;
                    }
                    next[i * out + o] = acc.max(0.0);
                }
            }
            cur = minmax_measure::autodiff::Array::matrix(n, out, next).expect("sized");
        }
        return batch;
    }
    panic!("could not find a kink-free batch");
}

/// All vertices of {x ≥ 0 : Ax = b} by brute force over column subsets,
/// evaluating the objective at each feasible basic solution. Exponential;
/// for tiny LPs only.
pub fn enumerate_lp_max(objective: &[f64], rows: &[Vec<f64>], rhs: &[f64]) -> Option<f64> {
    let m = rows.len();
    let n = objective.len();
    let rank = matrix_rank(rows);
    let mut best: Option<f64> = None;
    let mut subset: Vec<usize> = Vec::new();
    enumerate_subsets(n, rank, 0, &mut subset, &mut |cols: &[usize]| {
        if let Some(x) = solve_subsystem(rows, rhs, cols, m) {
            if x.iter().all(|&v| v >= -1e-9) {
                let mut full = vec![0.0; n];
                for (k, &c) in cols.iter().enumerate() {
                    full[c] = x[k];
                }
                // Verify against every row (the subsystem only used `rank`).
                let feasible = rows
                    .iter()
                    .zip(rhs)
                    .all(|(row, &b)| {
                        let ax: f64 = row.iter().zip(&full).map(|(a, x)| a * x).sum();
                        (ax - b).abs() <= 1e-8
                    });
                if feasible {
                    let v: f64 = full.iter().zip(objective).map(|(x, c)| x * c).sum();
                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                }
            }
        }
    });
    best
}

fn enumerate_subsets(
    n: usize,
    k: usize,
    start: usize,
    current: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if current.len() == k {
        visit(current);
        return;
    }
    let needed = k - current.len();
    for c in start..=n.saturating_sub(needed) {
        current.push(c);
        enumerate_subsets(n, k, c + 1, current, visit);
        current.pop();
    }
}

/// Least-squares-free exact solve of the row-reduced square system obtained
/// by selecting `cols` and a maximal independent row set.
fn solve_subsystem(rows: &[Vec<f64>], rhs: &[f64], cols: &[usize], m: usize) -> Option<Vec<f64>> {
    let k = cols.len();
    // Build the m×k submatrix, then solve in the least-squares sense via
    // Gaussian elimination on the normal-free augmented system by selecting
    // pivot rows greedily.
    let mut a: Vec<Vec<f64>> = (0..m)
        .map(|i| cols.iter().map(|&c| rows[i][c]).collect())
        .collect();
    let mut b: Vec<f64> = rhs.to_vec();
    let mut pivot_row = 0usize;
    for col in 0..k {
        let (best, val) = (pivot_row..m)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if val < 1e-10 {
            return None; // singular selection
        }
        a.swap(pivot_row, best);
        b.swap(pivot_row, best);
        for r in 0..m {
            if r == pivot_row {
                continue;
            }
            let f = a[r][col] / a[pivot_row][col];
            if f != 0.0 {
                for c in col..k {
                    a[r][c] -= f * a[pivot_row][c];
                }
                b[r] -= f * b[pivot_row];
            }
        }
        pivot_row += 1;
        if pivot_row == m {
            break;
        }
    }
    // Remaining rows must be consistent (0 = b).
    for r in pivot_row..m {
        if b[r].abs() > 1e-8 {
            return None;
        }
    }
    let mut x = vec![0.0; k];
    for col in (0..k).rev() {
        // After full elimination the system is diagonal in the pivot order.
        x[col] = b[col] / a[col][col];
    }
    Some(x)
}

pub fn matrix_rank(rows: &[Vec<f64>]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let n = rows[0].len();
    let m = rows.len();
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let mut rank = 0;
    let mut col = 0;
    while rank < m && col < n {
        let (best, val) = (rank..m)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if val < 1e-9 {
            col += 1;
            continue;
        }
        a.swap(rank, best);
        for r in rank + 1..m {
            let f = a[r][col] / a[rank][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[rank][c];
                }
            }
        }
        rank += 1;
        col += 1;
    }
    rank
}
