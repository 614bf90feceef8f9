use bvmlab_harness::{ExperimentConfig, HarnessError, Metric};

fn parse(text: &str) -> Result<ExperimentConfig, HarnessError> {
    ExperimentConfig::from_json(text)
}

#[test]
fn empty_metrics_is_invalid() {
    let err = parse(r#"{"experiment": "x", "family": "multinomial", "sweep": [{"d": 1, "n": 10}], "metrics": [], "seed": 1}"#).unwrap_err();
    match err {
        HarnessError::ConfigInvalid(problems) => assert!(problems.iter().any(|p| p.starts_with("metrics"))),
        other => panic!("{other:?}"),
    }
    assert_eq!(HarnessError::ConfigInvalid(vec![]).exit_code(), 1);
}

#[test]
fn problems_are_reported_per_field() {
    let err =
        parse(r#"{"experiment": "", "family": "mv-linear", "sweep": [{"d": 1, "n": 0}], "metrics": ["mle-rate"], "replications": 0, "seed": 1}"#)
            .unwrap_err();
    let HarnessError::ConfigInvalid(problems) = err else { panic!() };
    for field in ["experiment", "replications", "sweep[0].n", "sweep[0]:", "metrics[0]"] {
        assert!(problems.iter().any(|p| p.starts_with(field)), "{field} missing from {problems:?}");
    }
}

#[test]
fn seed_is_required() {
    assert!(parse(r#"{"experiment": "x", "family": "multinomial", "sweep": [{"d": 1, "n": 10}], "metrics": ["tv"]}"#).is_err());
}

#[test]
fn metric_spellings() {
    let cfg = parse(
        r#"{"experiment": "x", "family": "multinomial", "sweep": [{"d": 1, "n": 10}],
            "metrics": ["tv", {"alpha-moment": {"alpha": 2}}, "lambda-curve", "a-n", "lemma-audits", "growth"], "seed": 1}"#,
    )
    .unwrap();
    assert_eq!(cfg.metrics[1], Metric::AlphaMoment { alpha: 2.0 });
    assert_eq!(cfg.metrics[3].name(), "a-n");
}

#[test]
fn digest_ignores_layout_and_tracks_meaning() {
    let a = parse(r#"{"experiment": "x", "family": "multinomial", "sweep": [{"d": 1, "n": 10}], "metrics": ["tv"], "seed": 1}"#).unwrap();
    let b = parse(
        r#"{"seed": 1, "metrics": ["tv"], "sweep": [{"n": 10, "d": 1}], "family": "multinomial", "experiment": "x",
            "replications": 1, "prior": {"kind": "flat"}, "method": {"c": 1.0, "grid_radius": 10}}"#,
    )
    .unwrap();
    assert_eq!(a.digest(), b.digest());
    let c = parse(r#"{"experiment": "x", "family": "multinomial", "sweep": [{"d": 1, "n": 11}], "metrics": ["tv"], "seed": 1}"#).unwrap();
    let d = parse(r#"{"experiment": "x", "family": "multinomial", "sweep": [{"d": 1, "n": 10}], "metrics": ["tv"], "seed": 2}"#).unwrap();
    let e = parse(r#"{"experiment": "x", "family": "multinomial", "sweep": [{"d": 1, "n": 10}], "metrics": ["tv"], "seed": 1, "method": {"c": 2}}"#)
        .unwrap();
    let digests = [a.digest(), c.digest(), d.digest(), e.digest()];
    for i in 0..digests.len() {
        for j in i + 1..digests.len() {
            assert_ne!(digests[i], digests[j]);
        }
    }
}
