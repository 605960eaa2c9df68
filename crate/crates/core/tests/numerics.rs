mod common;

use common::{matmul_oracle, max_grad_error, random_tensor, rng};
use ldam_core::numerics::{bigru_sequence, Graph, GruCellParams, Tensor, Var};
use proptest::prelude::*;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const TOL: f64 = 1e-4;

/// Contracts `v` against a fixed pseudo-random tensor of the same shape.
fn probe(g: &mut Graph, v: Var, seed: u64) -> Var {
    let w = random_tensor(g.value(v).shape(), &mut rng(seed ^ 0xabcdef));
    let w = g.constant(w);
    let p = g.mul(v, w).unwrap();
    g.sum(p)
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(11);
    let (a, b) = (random_tensor(&[3, 2], &mut r), random_tensor(&[2, 4], &mut r));
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let p = g.matmul(va, vb).unwrap();
    assert!(g.value(p).max_abs_diff(&matmul_oracle(&a, &b)) < 1e-15);
}

#[test]
fn gradcheck_matmul_and_elementwise() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let ins = [random_tensor(&[3, 4], &mut r), random_tensor(&[4, 2], &mut r)];
        let err = max_grad_error(
            |g, v| {
                let p = g.matmul(v[0], v[1]).unwrap();
                probe(g, p, seed)
            },
            &ins,
        );
        assert!(err < TOL, "matmul seed {seed}: {err}");

        let ins = [random_tensor(&[2, 3], &mut r), random_tensor(&[2, 3], &mut r), random_tensor(&[2], &mut r)];
        let err = max_grad_error(
            |g, v| {
                let a = g.add(v[0], v[1]).unwrap();
                let m = g.mul(a, v[1]).unwrap();
                let s = g.sub(m, v[0]).unwrap();
                let b = g.add_col_bias(s, v[2]).unwrap();
                let t = g.transpose(b).unwrap();
                let sc = g.scale(t, 0.7);
                probe(g, sc, seed)
            },
            &ins,
        );
        assert!(err < TOL, "elementwise seed {seed}: {err}");
    }
}

#[test]
fn gradcheck_activations_and_softmax() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let ins = [random_tensor(&[7], &mut r)];
        for (name, f) in [
            ("relu", Graph::relu as fn(&mut Graph, Var) -> Var),
            ("sigmoid", Graph::sigmoid),
            ("tanh", Graph::tanh),
            ("softmax", Graph::softmax),
        ] {
            let err = max_grad_error(
                |g, v| {
                    let y = f(g, v[0]);
                    probe(g, y, seed)
                },
                &ins,
            );
            assert!(err < TOL, "{name} seed {seed}: {err}");
        }
    }
}

#[test]
fn gradcheck_conv_and_maxpool() {
    for seed in SEEDS {
        let mut r = rng(seed);
        for k in [1, 3, 5] {
            let ins = [random_tensor(&[3, 6], &mut r), random_tensor(&[4, 3, k], &mut r), random_tensor(&[4], &mut r)];
            let err = max_grad_error(
                |g, v| {
                    let c = g.conv1d_same(v[0], v[1], v[2]).unwrap();
                    let a = g.relu(c);
                    let m = g.maxpool_channels(a).unwrap();
                    probe(g, m, seed)
                },
                &ins,
            );
            assert!(err < TOL, "conv k={k} seed {seed}: {err}");
        }
    }
}

#[test]
fn gradcheck_structural_ops() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let ins = [random_tensor(&[2, 3], &mut r), random_tensor(&[2, 2], &mut r), random_tensor(&[1, 3], &mut r)];
        let err = max_grad_error(
            |g, v| {
                let c = g.concat_cols(&[v[0], v[1]]).unwrap();
                let s = g.slice_cols(c, 1, 4).unwrap();
                let rws = g.concat_rows(&[s, v[2]]).unwrap();
                let sr = g.slice_rows(rws, 1, 3).unwrap();
                let p = g.pad_rows(sr, 4).unwrap();
                let rs = g.reshape(p, &[12]).unwrap();
                probe(g, rs, seed)
            },
            &ins,
        );
        assert!(err < TOL, "structural seed {seed}: {err}");
    }
}

#[test]
fn gradcheck_losses() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let ins = [random_tensor(&[5], &mut r), random_tensor(&[4, 3], &mut r)];
        let targets = [1.0, 0.0, 0.0, 1.0, 1.0];
        let err = max_grad_error(
            |g, v| {
                let p = g.sigmoid(v[0]);
                let bce = g.bce_mean(p, &targets).unwrap();
                let ce = g.softmax_ce_columns(v[1]).unwrap();
                let ce = g.scale(ce, 0.5);
                g.add(bce, ce).unwrap()
            },
            &ins,
        );
        assert!(err < TOL, "losses seed {seed}: {err}");
    }
}

#[test]
fn gradcheck_gru_step_every_parameter() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let cell = GruCellParams::init(3, 4, &mut r);
        let mut ins: Vec<Tensor> = cell.tensors().into_iter().cloned().collect();
        // Non-zero biases so their gradients are exercised away from the init point.
        for b in &mut ins[6..9] {
            *b = random_tensor(&[4], &mut r);
        }
        ins.push(random_tensor(&[2, 3], &mut r));
        ins.push(random_tensor(&[2, 4], &mut r));
        let err = max_grad_error(
            |g, v| {
                let p = ldam_core::numerics::GruVars {
                    w_z: v[0],
                    w_r: v[1],
                    w_h: v[2],
                    u_z: v[3],
                    u_r: v[4],
                    u_h: v[5],
                    b_z: v[6],
                    b_r: v[7],
                    b_h: v[8],
                };
                let h1 = g.gru_step(&p, v[9], v[10]).unwrap();
                let h2 = g.gru_step(&p, v[9], h1).unwrap();
                probe(g, h2, seed)
            },
            &ins,
        );
        assert!(err < TOL, "gru seed {seed}: {err}");
    }
}

fn gru_vec_oracle(c: &GruCellParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hid = c.hidden_size();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let affine = |w: &Tensor, u: &Tensor, b: &Tensor, hin: &[f64], i: usize| {
        let wx: f64 = (0..x.len()).map(|j| w.at(i, j) * x[j]).sum();
        let uh: f64 = (0..hid).map(|j| u.at(i, j) * hin[j]).sum();
        wx + uh + b.data()[i]
    };
    let z: Vec<f64> = (0..hid).map(|i| sig(affine(&c.w_z, &c.u_z, &c.b_z, h, i))).collect();
    let r: Vec<f64> = (0..hid).map(|i| sig(affine(&c.w_r, &c.u_r, &c.b_r, h, i))).collect();
    let rh: Vec<f64> = (0..hid).map(|i| r[i] * h[i]).collect();
    (0..hid)
        .map(|i| {
            let cand = affine(&c.w_h, &c.u_h, &c.b_h, &rh, i).tanh();
            (1.0 - z[i]) * h[i] + z[i] * cand
        })
        .collect()
}

#[test]
fn bigru_matches_unrolled_steps() {
    let mut r = rng(21);
    let fwd = GruCellParams::init(2, 3, &mut r);
    let bwd = GruCellParams::init(2, 3, &mut r);
    let xs = random_tensor(&[3, 2], &mut r);

    let mut g = Graph::new();
    let (fv, bv) = (fwd.register(&mut g, false), bwd.register(&mut g, false));
    let x = g.constant(xs.clone());
    let (states, last) = bigru_sequence(&mut g, &fv, &bv, x).unwrap();

    let mut hf = vec![vec![0.0; 3]; 3];
    let mut h = vec![0.0; 3];
    for (t, slot) in hf.iter_mut().enumerate() {
        h = gru_vec_oracle(&fwd, xs.row(t), &h);
        slot.clone_from(&h);
    }
    let mut hb = vec![vec![0.0; 3]; 3];
    let mut h = vec![0.0; 3];
    for t in (0..3).rev() {
        h = gru_vec_oracle(&bwd, xs.row(t), &h);
        hb[t] = h.clone();
    }
    let st = g.value(states);
    for t in 0..3 {
        let expect: Vec<f64> = hf[t].iter().chain(&hb[t]).cloned().collect();
        for (a, b) in st.row(t).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }
    let expect_last: Vec<f64> = hf[2].iter().chain(&hb[0]).cloned().collect();
    for (a, b) in g.value(last).data().iter().zip(&expect_last) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn bigru_time_reversal_swaps_directions() {
    let mut r = rng(5);
    let fwd = GruCellParams::init(1, 2, &mut r);
    let bwd = GruCellParams::init(1, 2, &mut r);
    let xs = random_tensor(&[4, 1], &mut r);
    let rev = xs.permute_rows(&[3, 2, 1, 0]).unwrap();

    let run = |f: &GruCellParams, b: &GruCellParams, x: &Tensor| {
        let mut g = Graph::new();
        let (fv, bv) = (f.register(&mut g, false), b.register(&mut g, false));
        let x = g.constant(x.clone());
        let (s, _) = bigru_sequence(&mut g, &fv, &bv, x).unwrap();
        g.value(s).clone()
    };
    let a = run(&fwd, &bwd, &xs);
    let b = run(&bwd, &fwd, &rev);
    for t in 0..4 {
        let (ra, rb) = (a.row(t), b.row(3 - t));
        assert_eq!(&ra[..2], &rb[2..]);
        assert_eq!(&ra[2..], &rb[..2]);
    }
}

#[test]
fn gradcheck_bigru_sequence() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let fwd = GruCellParams::init(2, 2, &mut r);
        let bwd = GruCellParams::init(2, 2, &mut r);
        let mut ins: Vec<Tensor> = fwd.tensors().into_iter().chain(bwd.tensors()).cloned().collect();
        ins.push(random_tensor(&[3, 2], &mut r));
        let err = max_grad_error(
            |g, v| {
                let mk = |o: usize| ldam_core::numerics::GruVars {
                    w_z: v[o],
                    w_r: v[o + 1],
                    w_h: v[o + 2],
                    u_z: v[o + 3],
                    u_r: v[o + 4],
                    u_h: v[o + 5],
                    b_z: v[o + 6],
                    b_r: v[o + 7],
                    b_h: v[o + 8],
                };
                let (s, last) = bigru_sequence(g, &mk(0), &mk(9), v[18]).unwrap();
                let a = probe(g, s, seed);
                let b = probe(g, last, seed + 1);
                g.add(a, b).unwrap()
            },
            &ins,
        );
        assert!(err < TOL, "bigru seed {seed}: {err}");
    }
}

fn vec_strategy(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    n.prop_flat_map(|len| prop::collection::vec(-50.0f64..50.0, len))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(xs in vec_strategy(1..=12), shift in -100.0f64..100.0) {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(xs.clone()));
        let b = g.constant(Tensor::vector(xs.iter().map(|x| x + shift).collect()));
        let (sa, sb) = (g.softmax(a), g.softmax(b));
        let total: f64 = g.value(sa).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(g.value(sa).max_abs_diff(g.value(sb)) < 1e-9);
    }

    #[test]
    fn conv_preserves_length(len in 1usize..20, half in 0usize..4, c_in in 1usize..4, c_out in 1usize..4, seed in 0u64..1000) {
        let k = 2 * half + 1;
        let mut r = rng(seed);
        let mut g = Graph::new();
        let x = g.constant(random_tensor(&[c_in, len], &mut r));
        let w = g.constant(random_tensor(&[c_out, c_in, k], &mut r));
        let b = g.constant(random_tensor(&[c_out], &mut r));
        let y = g.conv1d_same(x, w, b).unwrap();
        prop_assert_eq!(g.value(y).shape(), &[c_out, len]);
    }

    #[test]
    fn matmul_is_linear(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
        let mut r = rng(seed);
        let mut g = Graph::new();
        let a = g.constant(random_tensor(&[m, k], &mut r));
        let b = g.constant(random_tensor(&[k, n], &mut r));
        let c = g.constant(random_tensor(&[k, n], &mut r));
        let bc = g.add(b, c).unwrap();
        let lhs = g.matmul(a, bc).unwrap();
        let ab = g.matmul(a, b).unwrap();
        let ac = g.matmul(a, c).unwrap();
        let rhs = g.add(ab, ac).unwrap();
        prop_assert!(g.value(lhs).max_abs_diff(g.value(rhs)) < 1e-9);
    }
}
