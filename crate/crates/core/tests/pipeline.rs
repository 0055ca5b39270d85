use rtf_doa::doa::{default_directions, generate_prototypes, DoaEstimate, PrototypeDatabase};
use rtf_doa::eval::{
    accuracy, evaluate_run, run, run_scene, scene_labels, sweep, RunConfig, SweepMatrix,
};
use rtf_doa::geometry::ArrayGeometry;
use rtf_doa::rtf::Estimator;
use rtf_doa::scene::{synthesize, SceneSpec};

fn db() -> PrototypeDatabase {
    generate_prototypes(&ArrayGeometry::binaural(), &default_directions(), 16_000, 512).unwrap()
}

fn short(azimuth: f64, snr_db: Option<f64>, seconds: f64) -> SceneSpec {
    let mut spec = SceneSpec::static_preset(azimuth, snr_db, 3);
    spec.duration_s = seconds;
    spec
}

#[test]
fn accuracy_example() {
    let est: Vec<DoaEstimate> = [10.0, 20.0, 175.0]
        .iter()
        .map(|&azimuth_deg| DoaEstimate { azimuth_deg, cost: 0.0, valid: true })
        .collect();
    let acc = accuracy(&est, &[10.0, 90.0, -175.0], 5.0).unwrap();
    assert!((acc - 100.0 / 3.0).abs() < 1e-9);
}

#[test]
fn noiseless_scene_is_localised_exactly() {
    let scene = synthesize(&short(-35.0, None, 4.0)).unwrap();
    let db = db();
    for est in Estimator::ALL {
        let cfg = RunConfig::static_default(est);
        let out = run_scene(&cfg, &[est], &scene, &db).unwrap().remove(0);
        let m = evaluate_run(&out, &scene.truth_doa, &cfg).unwrap();
        assert_eq!(m.accuracy_pct, 100.0, "{est}");
    }
}

#[test]
fn coherence_estimator_never_reads_noise_covariance() {
    let scene = synthesize(&short(35.0, Some(0.0), 3.0)).unwrap();
    let db = db();
    let cfg = RunConfig::static_default(Estimator::Sc);
    let labels = scene_labels(&scene, &cfg).unwrap();
    let out = run(&cfg, &scene.mixed, Some(&labels), &db).unwrap();
    assert_eq!(out.noise_reads, 0);
    let cfg = RunConfig::static_default(Estimator::CwHead);
    let out = run(&cfg, &scene.mixed, Some(&labels), &db).unwrap();
    assert!(out.noise_reads > 0);
}

#[test]
fn external_estimators_need_the_external_channel() {
    let scene = synthesize(&short(35.0, Some(0.0), 2.0)).unwrap();
    let head_only = scene.mixed.head_channels(4);
    let db = db();
    let mut cfg = RunConfig::static_default(Estimator::Sc);
    let labels = scene_labels(&scene, &cfg).unwrap();
    for est in [Estimator::Sc, Estimator::CwExt] {
        cfg.estimator = est;
        let err = run(&cfg, &head_only, Some(&labels), &db).unwrap_err();
        assert!(err.is_config(), "{err}");
    }
    cfg.estimator = Estimator::CwHead;
    assert!(run(&cfg, &head_only, Some(&labels), &db).is_ok());
}

#[test]
fn oracle_detector_needs_labels() {
    let scene = synthesize(&short(35.0, Some(0.0), 2.0)).unwrap();
    let cfg = RunConfig::static_default(Estimator::CwHead);
    assert!(run(&cfg, &scene.mixed, None, &db()).unwrap_err().is_config());
}

#[test]
fn remixing_matches_rendering() {
    let a = synthesize(&short(35.0, Some(0.0), 2.0)).unwrap();
    let b = synthesize(&short(35.0, Some(7.0), 2.0)).unwrap();
    let remixed = a.with_snr(7.0, &ArrayGeometry::binaural().front_pair()).unwrap();
    let scale = b.mixed.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (x, y) in remixed.mixed.samples.iter().zip(b.mixed.samples.iter()) {
        assert!((x - y).abs() <= 1e-9 * scale);
    }
    assert!(synthesize(&short(35.0, None, 2.0)).unwrap().with_snr(0.0, &[0, 2]).is_err());
}

#[test]
fn sweep_has_one_row_per_snr_and_estimator() {
    let matrix: SweepMatrix = serde_json::from_value(serde_json::json!({
        "snr_db": [-10.0, -5.0, 0.0, 5.0, 10.0],
        "estimators": ["cs-head", "cw-ext", "cw-head", "sc"],
        "source_azimuths": [35.0],
        "seeds": [1],
        "duration_s": 2.5,
    }))
    .unwrap();
    let rows = sweep(&matrix).unwrap();
    assert_eq!(rows.len(), 20);
    for snr in &matrix.snr_db {
        for est in Estimator::ALL {
            let hits = rows.iter().filter(|r| r.snr_db == *snr && r.estimator == est).count();
            assert_eq!(hits, 1, "{snr} dB {est}");
        }
    }
    assert!(rows.iter().all(|r| r.failures == 0 && r.accuracy_pct.is_some()));
}

#[test]
fn joint_run_equals_separate_runs() {
    let scene = synthesize(&short(-145.0, Some(5.0), 3.0)).unwrap();
    let db = db();
    let cfg = RunConfig::static_default(Estimator::CsHead);
    let joint = run_scene(&cfg, &Estimator::ALL, &scene, &db).unwrap();
    for (est, out) in Estimator::ALL.iter().zip(&joint) {
        let single = run_scene(&cfg, &[*est], &scene, &db).unwrap().remove(0);
        assert_eq!(out.estimator, *est);
        assert_eq!(
            format!("{:?}", out.estimates),
            format!("{:?}", single.estimates),
            "{est}"
        );
    }
}
