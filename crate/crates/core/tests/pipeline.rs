use std::fs;

use copula_conformal::conformal::{build, BuildConfig};
use copula_conformal::copula::CopulaKind;
use copula_conformal::dataio::{load_csv, make_folds, standardize, synth_dataset, FoldParams};
use copula_conformal::eval::{validity_curve, validity_gap};
use copula_conformal::regress::{MlpParams, RegressorSpec};
use copula_conformal::Error;

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn csv_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let data = synth_dataset(50, 2, 3, 0.4, 10).unwrap();
    data.write_csv(fs::File::create(&path).unwrap()).unwrap();
    let back = load_csv(&path, &names(&["t1", "t2"])).unwrap();
    assert_eq!(back.features(), data.features());
    assert_eq!(back.targets(), data.targets());
    assert_eq!(back.feature_names(), data.feature_names());
}

#[test]
fn csv_errors_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "a,b,t\n1,2,3\n4,oops,6\n").unwrap();
    match load_csv(&path, &names(&["t"])) {
        Err(Error::NonNumericCell { row, col }) => assert_eq!((row, col.as_str()), (1, "b")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(load_csv(&path, &names(&["z"])), Err(Error::MissingColumn(c)) if c == "z"));
    assert!(matches!(load_csv(dir.path().join("absent.csv"), &names(&["t"])), Err(Error::Io(_))));
}

#[test]
fn mlp_pipeline_end_to_end() {
    let data = synth_dataset(900, 2, 4, 0.5, 3).unwrap();
    let plan = make_folds(
        data.n_rows(),
        FoldParams {
            fold_count: 3,
            calibration_fraction: 0.25,
            seed: 5,
            min_calibration: 8,
        },
    )
    .unwrap();
    let fold = &plan.folds[0];
    let (scaled, _) = standardize(&data, &fold.train).unwrap();
    let mlp = RegressorSpec::Mlp(MlpParams {
        widths: vec![16, 16],
        dropout: 0.1,
        epochs: 30,
        lr: 1e-3,
        batch: 32,
    });
    let mut config = BuildConfig::new(mlp.clone(), mlp, CopulaKind::Empirical);
    config.seed = 42;
    let p = build(&scaled, &fold.train, &fold.calib, &config).unwrap();
    let test = scaled.select_rows(&fold.test).unwrap();
    let grid = [0.05, 0.1, 0.2, 0.4];
    let curve = validity_curve(&p, &test, &grid).unwrap();
    assert!(curve.coverage.windows(2).all(|w| w[0] >= w[1]));
    // 300 test rows: a valid predictor stays within a few points of the line.
    assert!(validity_gap(&curve).abs() < 8.0, "{curve:?}");

    let again = build(&scaled, &fold.train, &fold.calib, &config).unwrap();
    assert_eq!(validity_curve(&again, &test, &grid).unwrap(), curve);
}

#[test]
fn regressor_specs_from_json() {
    let ridge: RegressorSpec = serde_json::from_str(r#"{"kind": "ridge"}"#).unwrap();
    assert_eq!(ridge, RegressorSpec::Ridge { l2: 0.0 });
    let knn: RegressorSpec = serde_json::from_str(r#"{"kind": "knn", "k": 7}"#).unwrap();
    assert_eq!(knn, RegressorSpec::Knn { k: 7 });
    let mlp: RegressorSpec = serde_json::from_str(r#"{"kind": "mlp", "epochs": 5}"#).unwrap();
    let RegressorSpec::Mlp(p) = mlp else { panic!() };
    assert_eq!(p.epochs, 5);
    assert_eq!(p.widths, vec![128, 128, 64, 32]);
    for bad in [r#"{"kind": "knn", "k": 3, "p": 2}"#, r#"{"kind": "mlp", "bogus": 1}"#, r#"{"kind": "svm"}"#] {
        assert!(serde_json::from_str::<RegressorSpec>(bad).is_err(), "{bad}");
    }
}
