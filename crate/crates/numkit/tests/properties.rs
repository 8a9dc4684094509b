use numkit::gradcheck::RandomProgram;
use numkit::{Graph, Matrix};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_graphs_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for i in 0..100 {
        let program = RandomProgram::generate(&mut rng);
        let err = program.check(1e-5);
        assert!(
            err < 1e-4,
            "graph {i} ({} ops): rel err {err:e}\n{program:?}",
            program.n_ops()
        );
    }
}

#[test]
fn attention_block_gradient() {
    // Softmax(Q·Kᵀ)·V with a layer-norm residual, the shape used downstream.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    use rand::Rng;
    let leaves: Vec<Matrix> = [(4, 3), (3, 3), (3, 3), (3, 3)]
        .iter()
        .map(|&(r, c)| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let err = numkit::gradcheck::max_relative_error(&leaves, 1e-5, |g: &mut Graph, v| {
        let q = g.matmul(v[0], v[1]);
        let k = g.matmul(v[0], v[2]);
        let val = g.matmul(v[0], v[3]);
        let scores = g.matmul_t(q, k);
        let scores = g.scale(scores, 1.0 / 3f64.sqrt());
        let attn = g.softmax_rows(scores);
        let ctx = g.matmul(attn, val);
        let res = g.add(ctx, v[0]);
        let z = g.layer_norm(res);
        let sq = g.hadamard(z, ctx);
        g.sum(sq)
    });
    assert!(err < 1e-5, "{err:e}");
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(m in matrix(3, 5), shift in -50.0f64..50.0) {
        let s = m.softmax_rows();
        for i in 0..3 {
            let total: f64 = s.row(i).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(s.row(i).iter().all(|v| *v > 0.0 && *v < 1.0));
        }
        let shifted = m.map(|v| v + shift).softmax_rows();
        prop_assert!((&shifted - &s).max_abs() < 1e-9);
    }

    #[test]
    fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 5)) {
        let left = &(&a * &b) * &c;
        let right = &a * &(&b * &c);
        prop_assert!((&left - &right).max_abs() < 1e-9);
    }
}
