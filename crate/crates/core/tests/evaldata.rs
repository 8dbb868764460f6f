use chronoskill::evaldata::synthetic::{generate, SyntheticConfig};
use chronoskill::evaldata::{
    elo_baseline, random_baseline, random_search, rolling_evaluate, EloConfig, Elo, EvalResult, MatchRecord,
    ModelTemplate, Schema,
};
use chronoskill::{Kernel, Likelihood};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

fn bradley_terry(seed: u64, matches: usize) -> (Vec<MatchRecord>, Schema) {
    let s = generate(&SyntheticConfig {
        competitors: 10,
        matches,
        days: 200,
        kernel: Kernel::constant(1.5).unwrap(),
        likelihood: Likelihood::Logit,
        home_advantage: 0.0,
        probes: 0,
        seed,
    })
    .unwrap();
    (s.records, s.schema)
}

#[test]
fn random_baseline_is_uniform() {
    let (records, schema) = bradley_terry(1, 300);
    let r = random_baseline(&records, &schema);
    assert!((r.log_loss - 2f64.ln()).abs() < 1e-12 && r.accuracy == 0.5);
    let ternary = Schema {
        ties: true,
        ..Schema::default()
    };
    let r = random_baseline(&records, &ternary);
    assert!((r.log_loss - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn static_model_beats_chance_on_static_data() {
    let (records, schema) = bradley_terry(2, 600);
    let template = ModelTemplate::new(Likelihood::Logit, Kernel::constant(1.5).unwrap());
    let result = rolling_evaluate(&template, &records, &schema, 0.7).unwrap();
    assert_eq!(result.n, 180);
    assert!(result.log_loss < 2f64.ln() - 0.02, "{}", result.log_loss);
    assert!(result.fits.unconverged == 0);
}

#[test]
fn rolling_never_sees_the_prediction_day() {
    let (records, schema) = bradley_terry(3, 400);
    let template = ModelTemplate::new(Likelihood::Probit, Kernel::constant(1.0).unwrap());
    let clean = rolling_evaluate(&template, &records, &schema, 0.7).unwrap();
    let test_start = 280;
    for probe in [test_start, test_start + 60] {
        let day = records[probe].day();
        // flip every outcome from that day on
        let poisoned: Vec<MatchRecord> = records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if r.day() >= day {
                    r.outcome = -r.outcome;
                }
                r
            })
            .collect();
        let dirty = rolling_evaluate(&template, &poisoned, &schema, 0.7).unwrap();
        for (a, b) in clean.predictions.iter().zip(&dirty.predictions) {
            if a.timestamp / 86_400 <= day {
                assert_eq!(a.probs, b.probs);
            }
        }
        // and the poison does reach later days
        assert!(clean
            .predictions
            .iter()
            .zip(&dirty.predictions)
            .any(|(a, b)| a.probs != b.probs));
    }
}

#[test]
fn aggregates_recompute_from_stored_predictions() {
    let (records, schema) = bradley_terry(4, 300);
    let template = ModelTemplate::new(Likelihood::Logit, Kernel::constant(1.0).unwrap());
    let result = rolling_evaluate(&template, &records, &schema, 0.7).unwrap();
    let mut csv = Vec::new();
    result.write_predictions(&mut csv).unwrap();
    let back = EvalResult::from_predictions(EvalResult::read_predictions(&csv[..]).unwrap());
    assert_eq!(back.log_loss, result.log_loss);
    assert_eq!(back.accuracy, result.accuracy);
    assert_eq!(back.predictions, result.predictions);
}

#[test]
fn elo_properties() {
    let (records, schema) = bradley_terry(5, 300);
    let frozen = elo_baseline(
        &records,
        &schema,
        &EloConfig {
            learning_rate: 0.0,
            draw_margin: None,
        },
        0.7,
    )
    .unwrap();
    assert!((frozen.log_loss - 2f64.ln()).abs() < 1e-12);

    let config = EloConfig {
        learning_rate: 0.262,
        draw_margin: None,
    };
    let mut elo = Elo::new(&config, &schema).unwrap();
    for r in &records {
        let before = elo.score(&r.comp_i) + elo.score(&r.comp_j);
        let p = elo.predict(&r.comp_i, &r.comp_j);
        elo.update(&r.comp_i, &r.comp_j, r.outcome).unwrap();
        assert!((elo.score(&r.comp_i) + elo.score(&r.comp_j) - before).abs() < 1e-12);
        // a rematch right away favours the winner more
        let q = elo.predict(&r.comp_i, &r.comp_j);
        if r.outcome == 1 {
            assert!(q[2] >= p[2]);
        } else {
            assert!(q[0] >= p[0]);
        }
    }
    let trained = elo_baseline(&records, &schema, &config, 0.7).unwrap();
    assert!(trained.log_loss < 2f64.ln());
}

#[test]
fn search_with_one_point_returns_it() {
    let (records, schema) = bradley_terry(6, 200);
    let space = json!({"likelihood": {"likelihood": "logit"}, "competitor": {"type": "constant", "var": 0.8}});
    let ranked = random_search(&space, 1, 7, &records, &schema).unwrap();
    assert_eq!(ranked.len(), 1);
    assert_eq!(ranked[0].config, space);
    assert!(ranked[0].score.is_some());
}

#[test]
fn search_is_seeded_and_records_failures() {
    let (records, schema) = bradley_terry(7, 200);
    let space = json!({
        "likelihood": {"likelihood": "probit"},
        "competitor": {"choice": [
            {"type": "constant", "var": {"log_uniform": [0.01, 10.0]}},
            {"type": "product", "children": [{"type": "constant", "var": 1.0}, {"type": "linear", "var": 1.0}]}
        ]}
    });
    let a = random_search(&space, 8, 11, &records, &schema).unwrap();
    let b = random_search(&space, 8, 11, &records, &schema).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().any(|e| e.error.is_some()));
    assert!(a.last().unwrap().score.is_none());
    assert!(a.windows(2).all(|w| match (w[0].score, w[1].score) {
        (Some(x), Some(y)) => x >= y,
        (None, Some(_)) => false,
        _ => true,
    }));
    let elo = json!({"elo": {"learning_rate": {"uniform": [0.0, 0.5]}}});
    let e = random_search(&elo, 5, 1, &records, &schema).unwrap();
    assert!(e.iter().all(|x| x.score.unwrap() <= -0.0));
}

/// Exact log N(y | 0, X K Xᵀ + σ² I) for pairwise Gaussian data.
fn dense_log_marginal(records: &[MatchRecord], schema: &Schema, kernel: &Kernel, noise: f64) -> f64 {
    let n = records.len();
    let t: Vec<f64> = records.iter().map(|r| schema.time(r.timestamp) - schema.time(records[0].timestamp)).collect();
    let sign = |r: &MatchRecord, id: &str| {
        if r.comp_i == id {
            1.0
        } else if r.comp_j == id {
            -1.0
        } else {
            0.0
        }
    };
    let mut c = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let ra = &records[a];
            let rb = &records[b];
            let mut v = 0.0;
            for id in [&ra.comp_i, &ra.comp_j] {
                let x = sign(ra, id) * sign(rb, id);
                if x != 0.0 {
                    v += x * kernel.evaluate(t[a], t[b]);
                }
            }
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
        c[(a, a)] += noise;
    }
    let y = DVector::from_iterator(
        n,
        records.iter().map(|r| {
            let (p, q) = r.points.unwrap();
            p as f64 - q as f64
        }),
    );
    let chol = c.cholesky().unwrap();
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * y.dot(&chol.solve(&y)) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[test]
fn search_recovers_ou_timescale() {
    let noise = 1.0;
    let s = generate(&SyntheticConfig {
        competitors: 6,
        matches: 1200,
        days: 3650,
        kernel: Kernel::matern12(4.0, 2.0).unwrap(),
        likelihood: Likelihood::gaussian(noise).unwrap(),
        home_advantage: 0.0,
        probes: 0,
        seed: 12,
    })
    .unwrap();
    let space = json!({
        "likelihood": {"likelihood": "gaussian", "obs_noise": noise},
        "competitor": {"type": "matern12", "var": 4.0, "lscale": {"log_uniform": [0.1, 40.0]}}
    });
    let ranked = random_search(&space, 16, 3, &s.records, &s.schema).unwrap();
    let lscale = |e: &chronoskill::evaldata::SearchEntry| e.config["competitor"]["lscale"].as_f64().unwrap();
    let best = lscale(&ranked[0]);
    assert!((1.0..=4.0).contains(&best), "best lscale {best}");

    // the exact dense evidence agrees on the winner among the sampled configs
    let exact: Vec<(f64, f64)> = ranked
        .iter()
        .map(|e| {
            let l = lscale(e);
            (l, dense_log_marginal(&s.records, &s.schema, &Kernel::matern12(4.0, l).unwrap(), noise))
        })
        .collect();
    let top = exact.iter().copied().fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    assert!((1.0..=4.0).contains(&top.0), "dense best {}", top.0);
}
