use eraki_core::bench::{mean_nrmse, scenario_problem};
use eraki_core::config::RunConfig;
use eraki_core::nn::Architecture;
use eraki_core::phantom::PhantomSpec;
use eraki_core::pipeline::{run_method, Method};
use eraki_core::sampling::PatternKind;

fn small(extents: [usize; 3], te: Vec<f64>) -> RunConfig {
    let mut cfg = RunConfig::new(5);
    cfg.phantom = PhantomSpec { te_ms: te, ..PhantomSpec::head(extents, 4) };
    cfg.mask.r1 = 2;
    cfg.mask.r2 = 2;
    cfg.mask.acs = Some([14, 14]);
    cfg.espirit.window = 4;
    cfg.train.architecture = Architecture { kernels: vec![[3, 3, 3], [1, 1, 1]], widths: vec![4] };
    cfg.train.iterations = 3;
    cfg.apply_seed();
    cfg
}

#[test]
fn kyt_methods_run_and_grappa_beats_zerofill() {
    let mut cfg = small([8, 48, 1], vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]);
    cfg.mask.kind = PatternKind::Kyt;
    cfg.mask.r2 = 4;
    cfg.mask.shift = 1;
    cfg.mask.acs = Some([24, 8]);
    cfg.recon.grappa.blocks = [2, 2];
    cfg.recon.grappa.readout_taps = 3;
    let sc = scenario_problem(&cfg).unwrap();
    assert_eq!(sc.problem.echoes.len(), 1);
    let zf = run_method(&sc.problem, Method::Zerofill, &cfg.recon).unwrap();
    let gr = run_method(&sc.problem, Method::Grappa, &cfg.recon).unwrap();
    let ek = run_method(&sc.problem, Method::ErakiKyt, &cfg.recon).unwrap();
    let e_zf = mean_nrmse(&zf, &sc.truth, 2).unwrap();
    let e_gr = mean_nrmse(&gr, &sc.truth, 2).unwrap();
    assert!(e_gr < e_zf, "grappa {e_gr} zerofill {e_zf}");
    assert_eq!(ek.models.len(), 1);
    assert_eq!(ek.models[0].out_channels(), 8);
    assert!(ek.images[0].is_finite());
    // eRAKI on a non-ky-t mask refuses the ky-t mode
    let plain = scenario_problem(&small([8, 24, 24], vec![0.0])).unwrap();
    assert!(run_method(&plain.problem, Method::ErakiKyt, &cfg.recon).is_err());
}

#[test]
fn elliptical_corners_stay_empty() {
    let mut cfg = small([6, 24, 24], vec![0.0]);
    cfg.mask.kind = PatternKind::Elliptical;
    let sc = scenario_problem(&cfg).unwrap();
    let mask = &sc.problem.masks[0];
    for method in [Method::Grappa, Method::Eraki] {
        let run = run_method(&sc.problem, method, &cfg.recon).unwrap();
        let k = &run.kspace[0];
        for (flat, v) in k.data().iter().enumerate() {
            let j = flat % 24;
            let i = (flat / 24) % 24;
            if !mask.acquirable(i, j) {
                assert_eq!(v.norm(), 0.0, "{method} at ({i}, {j})");
            }
        }
    }
}

#[test]
fn joint_echoes_share_one_model() {
    let mut cfg = small([6, 24, 24], vec![5.0, 15.0, 25.0]);
    cfg.mask.echo_shifted = true;
    let sc = scenario_problem(&cfg).unwrap();
    assert_eq!(sc.problem.masks.len(), 3);
    let joint = run_method(&sc.problem, Method::ErakiJoint, &cfg.recon).unwrap();
    assert_eq!(joint.models.len(), 1);
    assert_eq!(joint.models[0].in_channels(), 2 * 4 * 3);
    assert_eq!(joint.models[0].out_channels(), 2 * 4 * 3);
    assert_eq!(joint.images.len(), 3);
    let single = run_method(&sc.problem, Method::Eraki, &cfg.recon).unwrap();
    assert_eq!(single.models.len(), 3);
    let raki = run_method(&sc.problem, Method::Raki, &cfg.recon).unwrap();
    assert_eq!(raki.models.len(), 4 * 3);
}
