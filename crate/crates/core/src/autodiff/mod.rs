//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! Values live on a [`Tape`]; every operation on a [`Var`] appends a node
//! holding its output and the handles of its inputs. [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients into every node that
//! depends on a differentiable leaf. Constants and [`Var::detach`]ed values
//! never receive gradient, which is how the alternating "fix G / fix F"
//! updates are expressed.
//!
//! Broadcasting is limited to one-element operands.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    /// Central differences of a scalar function of one tensor.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..x.numel())
            .map(|i| {
                let mut plus = x.clone();
                plus.data_mut()[i] += h;
                let mut minus = x.clone();
                minus.data_mut()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close_rel(analytic: &[f64], numeric: &[f64], tol: f64) {
        assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(numeric) {
            let denom = a.abs().max(n.abs()).max(1e-5);
            assert!((a - n).abs() / denom < tol, "analytic {a} vs numeric {n}");
        }
    }

    /// Checks d(sum(w * op(x)))/dx against finite differences, with a fixed
    /// random weighting so elementwise ops get non-uniform upstream gradients.
    fn check_unary(name: &str, op: impl Fn(Var<'_>) -> Var<'_>, x: Tensor, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe = Tape::new();
        let out_shape = op(probe.constant(x.clone())).shape();
        let w = random(&out_shape, &mut rng);
        let eval = |xt: &Tensor| {
            let tape = Tape::new();
            let y = op(tape.constant(xt.clone()));
            y.mul(&tape.constant(w.clone())).unwrap().sum().unwrap().item().unwrap()
        };
        let tape = Tape::new();
        let xv = tape.var(x.clone());
        let loss = op(xv).mul(&tape.constant(w.clone())).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(xv).unwrap_or_else(|| panic!("{name}: no grad"));
        assert_close_rel(analytic.data(), &numeric_grad(&x, eval), 1e-4);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let m = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        assert_eq!(i.matmul(&m).unwrap().value().data(), &[3.0, 4.0, 5.0, 6.0]);

        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let z = tape.constant(Tensor::zeros(&[2, 1]));
        let out = a.matmul(&z).unwrap().value();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data(), &[0.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(a.matmul(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_b_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let tape = Tape::new();
        let av = tape.var(a.clone());
        let bv = tape.constant(b.clone());
        let loss = av.matmul(&bv).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        let analytic = g.get(av).unwrap();
        // ones(3x2) * b^T: every row equals the row sums of b
        for i in 0..3 {
            for k in 0..4 {
                let expect = b.row(k).iter().sum::<f64>();
                assert!((analytic.data()[i * 4 + k] - expect).abs() < 1e-12);
            }
        }
        let numeric = numeric_grad(&a, |at| {
            let t = Tape::new();
            t.constant(at.clone())
                .matmul(&t.constant(b.clone()))
                .unwrap()
                .sum()
                .unwrap()
                .item()
                .unwrap()
        });
        assert_close_rel(analytic.data(), &numeric, 1e-4);
    }

    #[test]
    fn elementwise_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(x.relu().unwrap().value().data(), &[0.0, 0.0, 2.0]);
        let y = tape.constant(Tensor::vector(vec![-0.3, 0.5]));
        assert_eq!(y.abs().unwrap().value().data(), &[0.3, 0.5]);
    }

    #[test]
    fn tanh_derivative_at_point() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(0.7));
        let g = tape.backward(x.tanh().unwrap()).unwrap();
        let h = 1e-5;
        let numeric = ((0.7f64 + h).tanh() - (0.7f64 - h).tanh()) / (2.0 * h);
        assert!((g.get(x).unwrap().data()[0] - numeric).abs() < 1e-6);
    }

    #[test]
    fn domain_errors() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(x.log(), Err(Error::Domain { op: "log", .. })));
        let y = tape.constant(Tensor::vector(vec![-1.0]));
        assert!(matches!(y.sqrt(), Err(Error::Domain { op: "sqrt", .. })));
        assert!(y.sqrt().is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1000.0));
        assert!(matches!(x.exp(), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn reductions() {
        let tape = Tape::new();
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 3.0], vec![5.0, 7.0]]).unwrap());
        assert_eq!(m.mean_axis(0).unwrap().value().data(), &[3.0, 5.0]);
        assert_eq!(m.mean_axis(1).unwrap().value().data(), &[2.0, 6.0]);
        assert_eq!(m.sum_axis(0).unwrap().value().data(), &[6.0, 10.0]);
        assert_eq!(m.sum().unwrap().item().unwrap(), 16.0);
        assert_eq!(m.mean().unwrap().item().unwrap(), 4.0);
        assert!(matches!(m.sum_axis(2), Err(Error::AxisOutOfRange { .. })));

        let v = tape.var(Tensor::vector(vec![3.0, 4.0]));
        let n = v.l2_norm().unwrap();
        assert_eq!(n.item().unwrap(), 5.0);
        let g = tape.backward(n).unwrap();
        let gv = g.get(v).unwrap().data();
        assert!((gv[0] - 0.6).abs() < 1e-12 && (gv[1] - 0.8).abs() < 1e-12);

        let empty = tape.constant(Tensor::zeros(&[0]));
        assert!(matches!(empty.sum(), Err(Error::EmptyReduction)));
    }

    #[test]
    fn softmax_cases() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![1000.0, 0.0]]).unwrap());
        let p = x.softmax_rows().unwrap().value();
        assert_eq!(&p.data()[..2], &[0.5, 0.5]);
        assert_eq!(p.data()[2], 1.0);
        assert!(p.data()[3] >= 0.0 && p.data()[3] < 1e-300);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = random(&[5, 3], &mut rng);
        let p = tape.constant(logits.clone()).softmax_rows().unwrap().value();
        let shifted = logits.map(|v| v + 17.5);
        let q = tape.constant(shifted).softmax_rows().unwrap().value();
        for i in 0..5 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for k in 0..3 {
                assert!((p.row(i)[k] - q.row(i)[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn backward_examples() {
        let tape = Tape::new();
        let w = tape.var(Tensor::ones(&[3]));
        let g = tape.backward(w.sum().unwrap()).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 1.0, 1.0]);

        let tape = Tape::new();
        let w = tape.var(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let g = tape.backward(w.mul(&w).unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let w = tape.var(Tensor::ones(&[3]));
        assert!(matches!(tape.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(vec![0.5, -1.5]));
        let w = tape.var(Tensor::vector(vec![2.0, 3.0]));
        let d = x.detach();
        let dd = d.detach();
        assert_eq!(dd.value(), d.value());
        assert!(!dd.requires_grad());
        let loss = d.mul(&w).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).is_none());
        assert!(g.get(d).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[0.5, -1.5]);
    }

    #[test]
    fn backward_is_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tape = Tape::new();
        let a = tape.var(random(&[4, 3], &mut rng));
        let b = tape.var(random(&[3, 2], &mut rng));
        let loss = a.matmul(&b).unwrap().tanh().unwrap().softmax_rows().unwrap();
        let loss = loss.square().unwrap().sum().unwrap();
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..5u64 {
            let x = random(&[3, 4], &mut rng);
            // keep inputs away from the kinks of relu/abs/max
            let x = x.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
            check_unary("relu", |v| v.relu().unwrap(), x.clone(), seed);
            check_unary("tanh", |v| v.tanh().unwrap(), x.clone(), seed);
            check_unary("exp", |v| v.exp().unwrap(), x.clone(), seed);
            check_unary("neg", |v| v.neg().unwrap(), x.clone(), seed);
            check_unary("abs", |v| v.abs().unwrap(), x.clone(), seed);
            check_unary("square", |v| v.square().unwrap(), x.clone(), seed);
            check_unary("max", |v| v.max_scalar(0.0).unwrap(), x.clone(), seed);
            let pos = x.map(|v| v.abs() + 0.1);
            check_unary("log", |v| v.log().unwrap(), pos.clone(), seed);
            check_unary("sqrt", |v| v.sqrt().unwrap(), pos.clone(), seed);
            check_unary("softmax", |v| v.softmax_rows().unwrap(), x.clone(), seed);
            check_unary("log_softmax", |v| v.log_softmax_rows().unwrap(), x.clone(), seed);
            check_unary("mean_axis0", |v| v.mean_axis(0).unwrap(), x.clone(), seed);
            check_unary("sum_axis1", |v| v.sum_axis(1).unwrap(), x.clone(), seed);
            check_unary("l2_norm", |v| v.l2_norm().unwrap(), x.clone(), seed);
            check_unary("pick", |v| v.pick_rows(&[0, 3, 1]).unwrap(), x.clone(), seed);
            check_unary("select", |v| v.select_rows(&[2, 0, 2]).unwrap(), x.clone(), seed);
            check_unary(
                "self_pairs",
                |v| v.pair_distances(&v, &[(0, 1), (2, 0), (1, 2)]).unwrap(),
                x.clone(),
                seed,
            );
        }
    }

    #[test]
    fn binary_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random(&[2, 3], &mut rng);
        let b = random(&[2, 3], &mut rng).map(|v| v.abs() + 0.5);
        let s = Tensor::scalar(1.3);
        type BinFn = for<'t> fn(Var<'t>, Var<'t>) -> Var<'t>;
        let ops: [(&str, BinFn); 4] = [
            ("add", |x, y| x.add(&y).unwrap()),
            ("sub", |x, y| x.sub(&y).unwrap()),
            ("mul", |x, y| x.mul(&y).unwrap()),
            ("div", |x, y| x.div(&y).unwrap()),
        ];
        for (name, op) in ops {
            for rhs in [&b, &s] {
                // gradient w.r.t. both operands, including the broadcast scalar
                for wrt_left in [true, false] {
                    let eval = |l: &Tensor, r: &Tensor| {
                        let t = Tape::new();
                        let y = op(t.constant(l.clone()), t.constant(r.clone()));
                        y.square().unwrap().sum().unwrap().item().unwrap()
                    };
                    let tape = Tape::new();
                    let lv = tape.var(a.clone());
                    let rv = tape.var(rhs.clone());
                    let loss = op(lv, rv).square().unwrap().sum().unwrap();
                    let g = tape.backward(loss).unwrap();
                    if wrt_left {
                        let n = numeric_grad(&a, |l| eval(l, rhs));
                        assert_close_rel(g.get(lv).unwrap().data(), &n, 1e-4);
                    } else {
                        let n = numeric_grad(rhs, |r| eval(&a, r));
                        assert_close_rel(g.get(rv).unwrap().data(), &n, 1e-4);
                    }
                    let _ = name;
                }
            }
        }
    }

    #[test]
    fn matmul_and_add_row_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random(&[5, 3], &mut rng);
        let w = random(&[3, 4], &mut rng);
        let b = random(&[4], &mut rng);
        let f = |x: &Tensor, w: &Tensor, b: &Tensor| {
            let t = Tape::new();
            t.constant(x.clone())
                .matmul(&t.constant(w.clone()))
                .unwrap()
                .add_row(&t.constant(b.clone()))
                .unwrap()
                .tanh()
                .unwrap()
                .sum()
                .unwrap()
                .item()
                .unwrap()
        };
        let tape = Tape::new();
        let (xv, wv, bv) = (tape.var(x.clone()), tape.var(w.clone()), tape.var(b.clone()));
        let loss = xv.matmul(&wv).unwrap().add_row(&bv).unwrap().tanh().unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_close_rel(g.get(xv).unwrap().data(), &numeric_grad(&x, |t| f(t, &w, &b)), 1e-4);
        assert_close_rel(g.get(wv).unwrap().data(), &numeric_grad(&w, |t| f(&x, t, &b)), 1e-4);
        assert_close_rel(g.get(bv).unwrap().data(), &numeric_grad(&b, |t| f(&x, &w, t)), 1e-4);
    }
}
