use lmmix::gating::{gate_gradient_check, init_gate, GateArch, GateSequence, FULL_DIM};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(seed: u64) -> Vec<GateSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..4)
        .map(|_| {
            let len = rng.gen_range(3..8);
            GateSequence {
                features: Array2::from_shape_fn((len, FULL_DIM), |_| rng.gen_range(-2.0..2.0)),
                p_nn: (0..len).map(|_| rng.gen_range(0.001..0.9)).collect(),
                p_ng: (0..len).map(|_| rng.gen_range(0.001..0.9)).collect(),
            }
        })
        .collect()
}

#[test]
fn every_architecture_matches_central_differences() {
    let data = batch(11);
    let refs: Vec<&GateSequence> = data.iter().collect();
    for arch in GateArch::ALL {
        for seed in [1, 2] {
            let net = init_gate(arch, FULL_DIM, seed, None).unwrap();
            let check = gate_gradient_check(&net, &refs, 1e-5).unwrap();
            assert_eq!(check.checked, net.num_params());
            assert!(check.significant * 2 > check.checked, "{arch}: {check:?}");
            assert!(check.max_rel_error < 1e-4, "{arch} seed {seed}: {check:?}");
        }
    }
}
