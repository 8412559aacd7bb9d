use ogmm_core::data::{make_pair, sample_shape, PairSpec, ShapeKind};
use ogmm_core::geometry::random_transform;
use ogmm_core::losses::{evaluate_losses, LossWeights};
use ogmm_core::metrics::{mae_rotation, mae_translation};
use ogmm_core::registration::{icp_baseline, OverlapMode, Solver};
use ogmm_core::{register, register_pair, RegistrationConfig};

fn desk() -> RegistrationConfig {
    RegistrationConfig {
        overlap_mode: OverlapMode::Oracle,
        ..RegistrationConfig::desk()
    }
}

#[test]
fn registration_is_equivariant_to_source_motion() {
    let src = sample_shape(ShapeKind::Composite, 256, 3).unwrap();
    let gt = random_transform(5, 45.0, 0.5).unwrap();
    let tgt = gt.apply(&src);
    let cfg = RegistrationConfig { overlap_mode: OverlapMode::Unguided, ..desk() };
    let base = register(&src, &tgt, &cfg, None).unwrap();
    let s = random_transform(6, 30.0, 0.3).unwrap();
    let moved = register(&s.apply(&src), &tgt, &cfg, None).unwrap();
    let expected = base.transform.compose(&s.inverse());
    assert!(moved.transform.geodesic_deg(&expected) < 1e-3);
    assert!((moved.transform.translation - expected.translation).amax() < 1e-5);
}

#[test]
fn registration_is_deterministic() {
    let pair = make_pair(&PairSpec { n_points: 300, seed: 4, ..Default::default() }, ShapeKind::Composite).unwrap();
    let a = register_pair(&pair, &desk()).unwrap();
    let b = register_pair(&pair, &desk()).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn every_mode_and_solver_returns_a_rotation() {
    let pair = make_pair(&PairSpec { n_points: 300, seed: 9, ..Default::default() }, ShapeKind::Composite).unwrap();
    for mode in [OverlapMode::Predicted, OverlapMode::Oracle, OverlapMode::Unguided] {
        for solver in [Solver::Ot, Solver::GmmL2] {
            let cfg = RegistrationConfig { overlap_mode: mode, solver, refine: 1, ..desk() };
            let res = register_pair(&pair, &cfg).unwrap();
            assert!(res.transform.is_proper(1e-9), "{mode:?} {solver:?}");
            assert!(res.overlap_source.iter().all(|o| (0.0..=1.0).contains(o)));
            let losses = evaluate_losses(&pair, &res, 0.1, LossWeights::default()).unwrap();
            assert!(losses.total.is_finite());
        }
    }
}

#[test]
fn icp_refines_a_nearby_start() {
    let pc = sample_shape(ShapeKind::Composite, 400, 12).unwrap();
    let gt = random_transform(13, 8.0, 0.05).unwrap();
    let out = icp_baseline(&pc, &gt.apply(&pc), &Default::default()).unwrap();
    assert!(mae_rotation(&out.transform, &gt) < 1e-6);
    assert!(mae_translation(&out.transform, &gt) < 1e-6);
}
