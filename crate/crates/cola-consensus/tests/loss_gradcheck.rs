//! Finite-difference check of the pairwise distillation loss with respect
//! to the student parameters (the only gradient path it has).

use cola_consensus::{AgentViews, ConsensusBuilder, ConsensusConfig};
use cola_tensor::finite_difference_check;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn consensus_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let mut cfg = ConsensusConfig::new(4, 3);
    cfg.hidden_widths = vec![6];
    let mut builder = ConsensusBuilder::new(cfg, &mut rng);

    let batch: Vec<AgentViews> = (0..4)
        .map(|_| {
            let views: Vec<Vec<f64>> =
                (0..3).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let mut v = AgentViews::all_alive(views);
            v.alive[2] = rng.gen_bool(0.5);
            v
        })
        .collect();

    let (_, analytic) = builder.consensus_loss_gradient(&batch);
    let x0 = builder.student_parameter_vector();

    let mut eval = |flat: &[f64]| {
        builder.set_student_parameter_vector(flat);
        builder.consensus_loss(&batch)
    };
    let err = finite_difference_check(&mut eval, &x0, &analytic, 1e-5);
    assert!(err < 1e-4, "consensus loss rel err {err}");
}

#[test]
fn gradient_of_degenerate_batch_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut builder = ConsensusBuilder::new(ConsensusConfig::new(4, 3), &mut rng);
    let batch = vec![AgentViews { features: vec![vec![1.0; 3], vec![2.0; 3]], alive: vec![true, false] }];
    let (loss, grad) = builder.consensus_loss_gradient(&batch);
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}
