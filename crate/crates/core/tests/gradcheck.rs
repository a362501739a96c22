//! Central finite-difference oracle for every differentiable operation:
//! analytic gradients from the reverse pass must match (f(x+h) − f(x−h)) / 2h
//! elementwise to a relative error below 1e-4 on random inputs in [-2, 2].

use trajlm_core::rng::Rng;
use trajlm_core::{Array, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: usize = 20;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

fn random_array(rng: &mut Rng, shape: &[usize]) -> Array {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
    Array::new(shape.to_vec(), data).unwrap()
}

/// Random array that keeps a margin away from zero (for kinked ops like
/// relu, where finite differences straddling the kink are meaningless).
fn random_array_kink_safe(rng: &mut Rng, shape: &[usize]) -> Array {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len)
        .map(|_| {
            let mut v = rng.uniform_in(-2.0, 2.0);
            while v.abs() < 1e-3 {
                v = rng.uniform_in(-2.0, 2.0);
            }
            v
        })
        .collect();
    Array::new(shape.to_vec(), data).unwrap()
}

/// Check d(loss)/d(inputs) for `f` building a scalar from leaf variables.
fn check<F>(name: &str, seed: u64, inputs: Vec<Array>, f: F)
where
    F: Fn(&[Var]) -> Var,
{
    let leaves: Vec<Var> = inputs.iter().cloned().map(Var::leaf).collect();
    let loss = f(&leaves);
    assert!(loss.value().is_scalar(), "{name}: probe loss must be scalar");
    loss.backward().unwrap();
    let analytic: Vec<Array> = leaves.iter().map(|l| l.grad_or_zeros()).collect();

    let eval = |xs: &[Array]| -> f64 {
        let vars: Vec<Var> = xs.iter().cloned().map(Var::leaf).collect();
        f(&vars).scalar_value().unwrap()
    };

    let mut max_err: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic[k].data()[i];
            let err = rel_err(a, numeric);
            if err > max_err {
                max_err = err;
            }
            assert!(
                err < TOL,
                "{name} seed {seed}: input {k} element {i}: analytic {a} vs numeric {numeric} (rel {err:.2e})"
            );
        }
    }
    let _ = max_err;
}

/// Weighted sum with fixed random weights turns any output into a scalar
/// probe without killing gradient structure.
fn weighted(rng: &mut Rng, out: &Var) -> Var {
    let shape = out.shape();
    let w = random_array(rng, &shape);
    out.mul_const(&w).unwrap().sum()
}

#[test]
fn grad_matmul() {
    for seed in 0..INSTANCES as u64 {
        let mut rng = Rng::derived(100, seed);
        let a = random_array(&mut rng, &[3, 4]);
        let b = random_array(&mut rng, &[4, 2]);
        let w = random_array(&mut rng, &[3, 2]);
        check("matmul", seed, vec![a, b], |v| {
            v[0].matmul(&v[1]).unwrap().mul_const(&w).unwrap().sum()
        });
    }
}

#[test]
fn grad_add_sub_mul_scale() {
    for seed in 0..INSTANCES as u64 {
        let mut rng = Rng::derived(101, seed);
        let a = random_array(&mut rng, &[2, 5]);
        let b = random_array(&mut rng, &[2, 5]);
        let w = random_array(&mut rng, &[2, 5]);
        check("add", seed, vec![a.clone(), b.clone()], |v| {
            v[0].add(&v[1]).unwrap().mul_const(&w).unwrap().sum()
        });
        check("sub", seed, vec![a.clone(), b.clone()], |v| {
            v[0].sub(&v[1]).unwrap().mul_const(&w).unwrap().sum()
        });
        check("mul", seed, vec![a.clone(), b], |v| {
            v[0].mul(&v[1]).unwrap().mul_const(&w).unwrap().sum()
        });
        check("scale", seed, vec![a], |v| {
            v[0].scale(-0.7).mul_const(&w).unwrap().sum()
        });
    }
}

#[test]
fn grad_relu() {
    for seed in 0..INSTANCES as u64 {
        let mut rng = Rng::derived(102, seed);
        let a = random_array_kink_safe(&mut rng, &[3, 4]);
        let w = random_array(&mut rng, &[3, 4]);
        check("relu", seed, vec![a], |v| {
            v[0].relu().mul_const(&w).unwrap().sum()
        });
    }
}

#[test]
fn grad_trig() {
    for seed in 0..INSTANCES as u64 {
        let mut rng = Rng::derived(103, seed);
        let a = random_array(&mut rng, &[2, 6]);
        let w = random_array(&mut rng, &[2, 6]);
        check("sin", seed, vec![a.clone()], |v| {
            v[0].sin().mul_const(&w).unwrap().sum()
        });
        check("cos", seed, vec![a], |v| {
            v[0].cos().mul_const(&w).unwrap().sum()
        });
    }
}

#[test]
fn grad_layer_norm() {
    for seed in 0..INSTANCES as u64 {
        let mut rng = Rng::derived(104, seed);
        let x = random_array(&mut rng, &[3, 6]);
        let gain = random_array(&mut rng, &[6]);
        let bias = random_array(&mut rng, &[6]);
        let w = random_array(&mut rng, &[3, 6]);
        check("layer_norm", seed, vec![x, gain, bias], |v| {
            v[0].layer_norm(&v[1], &v[2], 1e-5)
                .unwrap()
                .mul_const(&w)
                .unwrap()
                .sum()
        });
    }
}

#[test]
fn grad_softmax() {
    for seed in 0..INSTANCES as u64 {
        let mut rng = Rng::derived(105, seed);
        let x = random_array(&mut rng, &[4, 5]);
        let w = random_array(&mut rng, &[4, 5]);
        check("softmax_lastdim", seed, vec![x], |v| {
            v[0].softmax_lastdim().mul_const(&w).unwrap().sum()
        });
    }
}

#[test]
fn grad_sum_and_transpose() {
    for seed in 0..INSTANCES as u64 {
        let mut rng = Rng::derived(106, seed);
        let x = random_array(&mut rng, &[3, 4]);
        check("sum", seed, vec![x.clone()], |v| v[0].sum());
        let w = random_array(&mut rng, &[4, 3]);
        check("transpose", seed, vec![x], |v| {
            v[0].transpose().unwrap().mul_const(&w).unwrap().sum()
        });
    }
}

#[test]
fn grad_slicing_and_stacking() {
    for seed in 0..INSTANCES as u64 {
        let mut rng = Rng::derived(107, seed);
        let x = random_array(&mut rng, &[5, 6]);
        let y = random_array(&mut rng, &[2, 6]);
        let wr = random_array(&mut rng, &[2, 6]);
        check("slice_rows", seed, vec![x.clone()], |v| {
            v[0].slice_rows(1, 2).unwrap().mul_const(&wr).unwrap().sum()
        });
        let wc = random_array(&mut rng, &[5, 3]);
        check("slice_cols", seed, vec![x.clone()], |v| {
            v[0].slice_cols(2, 3).unwrap().mul_const(&wc).unwrap().sum()
        });
        let wcat = random_array(&mut rng, &[7, 6]);
        check("concat_rows", seed, vec![x.clone(), y], |v| {
            Var::concat_rows(&[v[0].clone(), v[1].clone()])
                .unwrap()
                .mul_const(&wcat)
                .unwrap()
                .sum()
        });
        let z = random_array(&mut rng, &[5, 2]);
        let wcc = random_array(&mut rng, &[5, 8]);
        check("concat_cols", seed, vec![x.clone(), z], |v| {
            Var::concat_cols(&[v[0].clone(), v[1].clone()])
                .unwrap()
                .mul_const(&wcc)
                .unwrap()
                .sum()
        });
        // repeated indices exercise the scatter-add backward
        let wg = random_array(&mut rng, &[4, 6]);
        check("gather_rows", seed, vec![x.clone()], |v| {
            v[0].gather_rows(&[0, 3, 3, 1])
                .unwrap()
                .mul_const(&wg)
                .unwrap()
                .sum()
        });
        let wt = random_array(&mut rng, &[15, 6]);
        check("tile_rows", seed, vec![x], |v| {
            v[0].tile_rows(3).unwrap().mul_const(&wt).unwrap().sum()
        });
    }
}

#[test]
fn grad_broadcast_and_consts() {
    for seed in 0..INSTANCES as u64 {
        let mut rng = Rng::derived(108, seed);
        let x = random_array(&mut rng, &[4, 3]);
        let b = random_array(&mut rng, &[3]);
        let w = random_array(&mut rng, &[4, 3]);
        check("add_row_broadcast", seed, vec![x.clone(), b], |v| {
            v[0].add_row_broadcast(&v[1])
                .unwrap()
                .mul_const(&w)
                .unwrap()
                .sum()
        });
        let c = random_array(&mut rng, &[4, 3]);
        check("add_const", seed, vec![x.clone()], |v| {
            v[0].add_const(&c).unwrap().mul_const(&w).unwrap().sum()
        });
        check("mul_const", seed, vec![x], |v| {
            v[0].mul_const(&c).unwrap().mul_const(&w).unwrap().sum()
        });
    }
}

#[test]
fn grad_trapezoid_integrate() {
    for seed in 0..INSTANCES as u64 {
        let mut rng = Rng::derived(109, seed);
        let v = random_array(&mut rng, &[6, 2]);
        let q0 = random_array(&mut rng, &[2]);
        let w = random_array(&mut rng, &[6, 2]);
        check("trapezoid_integrate", seed, vec![v, q0], |vars| {
            vars[0]
                .trapezoid_integrate(&vars[1], 0.05)
                .unwrap()
                .mul_const(&w)
                .unwrap()
                .sum()
        });
    }
}

#[test]
fn grad_composite_attention_like() {
    // a softmax(QKᵀ)V composite, closest to how the ops are used in anger
    for seed in 0..INSTANCES as u64 {
        let mut rng = Rng::derived(110, seed);
        let q = random_array(&mut rng, &[4, 3]);
        let k = random_array(&mut rng, &[4, 3]);
        let v = random_array(&mut rng, &[4, 3]);
        let w = random_array(&mut rng, &[4, 3]);
        check("attention_composite", seed, vec![q, k, v], |vars| {
            let scores = vars[0]
                .matmul(&vars[1].transpose().unwrap())
                .unwrap()
                .scale(1.0 / (3.0f64).sqrt());
            let probs = scores.softmax_lastdim();
            probs
                .matmul(&vars[2])
                .unwrap()
                .mul_const(&w)
                .unwrap()
                .sum()
        });
    }
}

#[test]
fn diamond_graph_equals_sum_of_paths() {
    // y = f(x) used twice: gradient is the sum over both paths
    let x = Var::leaf(Array::from_vec(vec![0.3, -1.2]));
    let s = x.sin();
    let left = s.scale(2.0);
    let right = s.mul(&s).unwrap();
    let y = left.add(&right).unwrap().sum();
    y.backward().unwrap();
    let g = x.grad().unwrap();
    for (i, &xv) in [0.3f64, -1.2].iter().enumerate() {
        let expect = (2.0 + 2.0 * xv.sin()) * xv.cos();
        assert!((g.data()[i] - expect).abs() < 1e-12);
    }
}
