mod common;

use chronoskill::special::norm_logcdf;
use chronoskill::{Likelihood, Outcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all() -> Vec<Likelihood> {
    vec![
        Likelihood::Probit,
        Likelihood::Logit,
        Likelihood::ordinal_probit(0.372).unwrap(),
        Likelihood::ordinal_logit(0.578).unwrap(),
        Likelihood::PoissonExp,
        Likelihood::gaussian(1.7).unwrap(),
    ]
}

fn random_outcome(lik: &Likelihood, rng: &mut ChaCha8Rng) -> Outcome {
    match lik {
        Likelihood::Probit | Likelihood::Logit => {
            if rng.random::<bool>() {
                Outcome::WIN
            } else {
                Outcome::LOSS
            }
        }
        Likelihood::OrdinalProbit { .. } | Likelihood::OrdinalLogit { .. } => {
            Outcome::Ordinal(rng.random_range(-1..=1))
        }
        Likelihood::PoissonExp => Outcome::Count(rng.random_range(0..8)),
        Likelihood::Gaussian { .. } => Outcome::Real(rng.random::<f64>() * 8.0 - 4.0),
    }
}

fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs().max(1.0)
}

#[test]
fn derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-3;
    for lik in all() {
        for _ in 0..200 {
            let y = random_outcome(&lik, &mut rng);
            let span = if lik == Likelihood::PoissonExp { 2.0 } else { 4.0 };
            let mean = (rng.random::<f64>() * 2.0 - 1.0) * span;
            let var = 10f64.powf(rng.random::<f64>() * 2.7 - 2.0);
            let ep = lik.ep_derivatives(y, mean, var).unwrap();
            let (d1, d2) = common::central(|m| common::log_partition(&lik, y, m, var), mean, h);
            let lz = common::log_partition(&lik, y, mean, var);
            assert!(close(ep.value, lz, 1e-6), "{lik:?} {y} {mean} {var}: {} vs {lz}", ep.value);
            assert!(close(ep.d1, d1, 1e-5), "{lik:?} {y} {mean} {var}: d1 {} vs {d1}", ep.d1);
            assert!(close(ep.d2, d2, 1e-5), "{lik:?} {y} {mean} {var}: d2 {} vs {d2}", ep.d2);

            let kl = lik.kl_derivatives(y, mean, var).unwrap();
            let (d1, d2) = common::central(|m| common::expected_log_lik(&lik, y, m, var), mean, h);
            assert!(close(kl.d1, d1, 1e-5), "{lik:?} {y} {mean} {var}: kl d1 {} vs {d1}", kl.d1);
            assert!(close(kl.d2, d2, 1e-5), "{lik:?} {y} {mean} {var}: kl d2 {} vs {d2}", kl.d2);
        }
    }
}

#[test]
fn probit_closed_form_matches_quadrature() {
    for lik in [Likelihood::Probit, Likelihood::ordinal_probit(0.5).unwrap()] {
        for i in 0..=20 {
            let mean = -5.0 + 0.5 * i as f64;
            for var in [0.01, 0.1, 1.0, 3.0, 10.0] {
                for y in [Outcome::WIN, Outcome::LOSS] {
                    let a = lik.ep_derivatives(y, mean, var).unwrap();
                    let b = lik.ep_derivatives_numeric(y, mean, var, 64).unwrap();
                    assert!((a.value - b.value).abs() < 1e-8, "{lik:?} {y} {mean} {var} {a:?} {b:?}");
                    assert!((a.d1 - b.d1).abs() < 1e-8, "{mean} {var}");
                    assert!((a.d2 - b.d2).abs() < 1e-8, "{mean} {var}");
                }
            }
        }
    }
}

#[test]
fn probabilities_normalize() {
    for i in 0..=40 {
        let d = -5.0 + 0.25 * i as f64;
        for lik in [Likelihood::Probit, Likelihood::Logit] {
            let s: f64 = [Outcome::WIN, Outcome::LOSS]
                .iter()
                .map(|&y| lik.log_pdf(y, d).unwrap().exp())
                .sum();
            assert!((s - 1.0).abs() < 1e-8);
        }
        for lik in [Likelihood::ordinal_probit(0.4).unwrap(), Likelihood::ordinal_logit(0.4).unwrap()] {
            let s: f64 = (-1..=1)
                .map(|v| lik.log_pdf(Outcome::Ordinal(v), d).unwrap().exp())
                .sum();
            assert!((s - 1.0).abs() < 1e-8, "{lik:?} {d}");
        }
        let s: f64 = (0..=200)
            .map(|k| Likelihood::PoissonExp.log_pdf(Outcome::Count(k), d).unwrap().exp())
            .sum();
        // Chernoff bound on P(Y > 200) for rate e^d
        let rate = d.exp();
        let tail = (-rate + 201.0 * (std::f64::consts::E * rate / 201.0).ln()).exp();
        assert!(s <= 1.0 + 1e-8 && 1.0 - s <= tail + 1e-8, "{d} {s} {tail}");
    }
}

#[test]
fn second_derivative_nonpositive() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for lik in all() {
        for _ in 0..500 {
            let y = random_outcome(&lik, &mut rng);
            let mean = rng.random::<f64>() * 20.0 - 10.0;
            let var = 10f64.powf(rng.random::<f64>() * 4.0 - 3.0);
            let span = if lik == Likelihood::PoissonExp { 0.3 } else { 1.0 };
            let mean = mean * span;
            assert!(lik.ep_derivatives(y, mean, var).unwrap().d2 <= 0.0);
            assert!(lik.kl_derivatives(y, mean, var).unwrap().d2 <= 0.0);
        }
    }
}

#[test]
fn vanishing_variance_recovers_pointwise_derivatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for lik in all() {
        for _ in 0..50 {
            let y = random_outcome(&lik, &mut rng);
            let mean = rng.random::<f64>() * 4.0 - 2.0;
            let ep = lik.ep_derivatives(y, mean, 1e-10).unwrap();
            let (g, h) = lik.log_pdf_derivatives(y, mean).unwrap();
            assert!((ep.d1 - g).abs() < 1e-4, "{lik:?}");
            assert!((ep.d2 - h).abs() < 1e-4, "{lik:?}");
        }
    }
    // probit mills ratio at the origin
    let ep = Likelihood::Probit.ep_derivatives(Outcome::WIN, 0.0, 1e-10).unwrap();
    assert!((ep.d1 - 0.797_884_560_802_865_4).abs() < 1e-6);
}

#[test]
fn degenerate_expected_log_likelihood() {
    let kl = Likelihood::Probit.kl_derivatives(Outcome::WIN, 3.0, 1e-8).unwrap();
    assert!((kl.value - norm_logcdf(3.0)).abs() < 1e-8);
}
