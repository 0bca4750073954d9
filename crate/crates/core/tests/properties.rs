use genogram_clt::bell::{cumulants_from_moments, moments_from_cumulants};
use genogram_clt::field_exact::{gen_cov, gen_cov_compositional, gen_dev, ExactField, FieldSpec, InnovationSpec};
use genogram_clt::genogram::{coeffs, enumerate, extensions_to_order, validate, Genogram, GenogramClass};
use genogram_clt::hamburger::{find_cp, hankel_minors, DiscreteDistribution};
use genogram_clt::metrics::{mixing_sums, tail_profiles, wasserstein_p_normal, MixingParams};
use genogram_clt::mixing_mc::{empirical_cumulants, BoxDomain, FieldModel, Innovation};
use genogram_clt::stein_edgeworth::{stein_residual, HermitePoly, MonomialPoly};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

fn random_field(support: Vec<f64>, weights: Vec<f64>, kernel: Vec<f64>) -> Option<ExactField> {
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let fix = 1.0 - probs[1..].iter().sum::<f64>();
    let mut probs = probs;
    probs[0] = fix;
    let inn = InnovationSpec { support, probs };
    let spec = FieldSpec {
        dimension: 1,
        sites: vec![vec![0], vec![1], vec![2]],
        innovations: vec![inn.clone(), inn.clone(), inn],
        kernel: Some(vec![kernel[0..3].to_vec(), kernel[3..6].to_vec(), kernel[6..9].to_vec()]),
        moving_average: None,
    };
    ExactField::from_spec(&spec).ok()
}

fn field_strategy() -> impl Strategy<Value = ExactField> {
    (
        prop::collection::vec(-2.0f64..2.0, 2..4),
        prop::collection::vec(0.2f64..1.0, 3),
        prop::collection::vec(-1.0f64..1.0, 9),
    )
        .prop_filter_map("degenerate", |(s, w, k)| {
            let n = s.len();
            random_field(s, w[..n].to_vec(), k)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bell_round_trip(k in prop::collection::vec(-1.0f64..1.0, 1..8)) {
        let mu = moments_from_cumulants(&k).unwrap();
        let back = cumulants_from_moments(&mu).unwrap();
        let scale = mu.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in k.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn moment_recursion(k in prop::collection::vec(-1.5f64..1.5, 1..8)) {
        let mu = moments_from_cumulants(&k).unwrap();
        for n in 1..=k.len() {
            let mut s = 0.0;
            let mut c = 1.0;
            for j in 1..=n {
                s += c * k[j - 1] * mu[n - j];
                c = c * (n - j) as f64 / j as f64;
            }
            prop_assert!((s - mu[n]).abs() < 1e-9 * (1.0 + mu[n].abs()));
        }
    }

    #[test]
    fn minors_of_distributions_are_positive(
        locs in prop::collection::vec(-3.0f64..3.0, 4),
        w in prop::collection::vec(0.1f64..1.0, 4),
    ) {
        let t: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|v| v / t).collect();
        let mut sorted = locs.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|p| p[1] - p[0] > 0.1));
        let fix = 1.0 - probs[1..].iter().sum::<f64>();
        let mut probs = probs;
        probs[0] = fix;
        let d = DiscreteDistribution::new(sorted, probs).unwrap();
        for m in hankel_minors(&d.moments(6)).unwrap() {
            prop_assert!(m > 0.0);
        }
    }

    #[test]
    fn stein_exact(c in prop::collection::vec((-40i64..40, 1i64..7), 0..11)) {
        let coeffs = c.iter().map(|&(a, b)| BigRational::new(BigInt::from(a), BigInt::from(b))).collect();
        let m = MonomialPoly::new(coeffs);
        let h = HermitePoly::from_monomial(&m).unwrap();
        prop_assert!(stein_residual(&h).is_zero());
        prop_assert_eq!(h.to_monomial(), m);
    }

    #[test]
    fn gen_cov_multilinear(f in field_strategy(), a in -2.0f64..2.0, b in -2.0f64..2.0, slot in 0usize..3) {
        let p = f.probs();
        let x: Vec<Vec<f64>> = (0..3).map(|i| f.x(i).to_vec()).collect();
        let mut args = vec![x[0].clone(), x[1].clone(), x[2].clone()];
        let y = &x[(slot + 1) % 3];
        let z: Vec<f64> = x[slot].iter().zip(y).map(|(u, v)| u * v).collect();
        args[slot] = x[slot].iter().zip(&z).map(|(u, v)| a * u + b * v).collect();
        let lhs = gen_cov(&args, p);
        let mut a1 = vec![x[0].clone(), x[1].clone(), x[2].clone()];
        let mut a2 = a1.clone();
        a1[slot] = x[slot].clone();
        a2[slot] = z;
        let rhs = a * gen_cov(&a1, p) + b * gen_cov(&a2, p);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn add_term_lemma(f in field_strategy(), picks in prop::collection::vec(0usize..3, 2..=5)) {
        let p = f.probs();
        let ys: Vec<Vec<f64>> = picks.iter().map(|&i| f.x(i).to_vec()).collect();
        let t = ys.len();
        let full = gen_cov(&ys, p);
        prop_assert!((full - gen_cov_compositional(&ys, p)).abs() < 1e-12);
        let d = gen_dev(&ys, p);
        prop_assert!(d.iter().zip(p).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-12);
        for j in 1..t {
            let tail = gen_dev(&ys[j..], p);
            let mut args: Vec<Vec<f64>> = ys[..j].to_vec();
            let last = args.pop().unwrap();
            args.push(last.iter().zip(&tail).map(|(a, b)| a * b).collect());
            prop_assert!((gen_cov(&args, p) - full).abs() < 1e-12);
        }
    }

    #[test]
    fn genogram_text_round_trip(k in 1usize..=5, pick in 0usize..1000) {
        let all = enumerate(k, 2, GenogramClass::All).unwrap();
        let g = &all[pick % all.len()];
        prop_assert!(validate(g.parents(), g.ids()));
        let back: Genogram = g.to_string().parse().unwrap();
        prop_assert_eq!(&back, g);
    }

    #[test]
    fn prefix_coefficients_compose(pick in 0usize..1000) {
        // a_{H,G} a_{G,root} = a_{H,root} whenever G is a prefix of H
        let root = Genogram::root();
        let all = extensions_to_order(&root, 4, 2);
        let h = &all[pick % all.len()];
        for m in 1..=4 {
            let g = h.prefix(m);
            let (ahg, _) = coeffs(h, &g).unwrap();
            let (agr, _) = coeffs(&g, &root).unwrap();
            let (ahr, _) = coeffs(h, &root).unwrap();
            prop_assert_eq!(ahg * agr, ahr);
        }
    }

    #[test]
    fn wasserstein_order_and_shift(xs in prop::collection::vec(-3.0f64..3.0, 2..60), c in -1.0f64..1.0) {
        let w1 = wasserstein_p_normal(&xs, 1.0).unwrap();
        let w2 = wasserstein_p_normal(&xs, 2.0).unwrap();
        let w3 = wasserstein_p_normal(&xs, 3.0).unwrap();
        prop_assert!(w1 > 0.0);
        prop_assert!(w1 <= w2 + 1e-12 && w2 <= w3 + 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let ws = wasserstein_p_normal(&shifted, 1.0).unwrap();
        prop_assert!((ws - w1).abs() <= c.abs() + 1e-12);
    }

    #[test]
    fn mixing_sums_monotone(v in 0.5f64..4.0, bump in 0.0f64..0.3, size in 4u64..5000) {
        let prm = MixingParams::new(2.0, 1, 6.0, 2, 0.5, size);
        let lo = mixing_sums(&|l| (l as f64).powf(-v).min(0.25), &prm).unwrap();
        let hi = mixing_sums(&|l| ((l as f64).powf(-v) + bump).min(0.25), &prm).unwrap();
        prop_assert!(lo.m_n <= hi.m_n && lo.m_i <= hi.m_i && lo.m_ii <= hi.m_ii);
    }
}

#[test]
fn cp_monotone() {
    let c: Vec<f64> = (1..=5).map(|k| find_cp(k).unwrap()).collect();
    assert!(c[2] <= c[0] && c[3] <= c[1] && c[4] <= c[2]);
}

#[test]
fn sigma_matches_empirical_variance() {
    let m = FieldModel::skewed_ma1();
    for n in [3usize, 10] {
        let dom = BoxDomain::line(n).unwrap();
        let b = m.batch(&dom, 100_000, 5).unwrap();
        let r = b.len() as f64;
        let mean = b.values.iter().sum::<f64>() / r;
        let var = b.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
        let m4 = b.values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / r;
        let se = ((m4 - var * var) / r).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se, "n={n}: var {var}, se {se}");
    }
}

#[test]
fn empirical_cumulants_match_exact_field() {
    let m = FieldModel::skewed_ma1();
    let n = 4;
    let b = m.batch(&BoxDomain::line(n).unwrap(), 20_000, 17).unwrap();
    let est = empirical_cumulants(&b, 4, 3).unwrap();
    let sites = (1..=n as i64).map(|i| vec![i]).collect();
    let inn = DiscreteDistribution::new(vec![-2.0, 0.5], vec![0.2, 0.8]).unwrap();
    let f = ExactField::moving_average(1, sites, &[(vec![0], 1.0), (vec![1], 1.0)], &inn).unwrap();
    let exact = genogram_clt::field_exact::exact_cumulants(&f, 4).unwrap();
    for (e, x) in est.iter().zip(&exact) {
        assert!((e.value - x).abs() < 3.0 * e.std_err, "{e:?} vs {x}");
    }
    // symmetric innovations
    let g = FieldModel::moving_average_1d(&[1.0], Innovation::StandardNormal).unwrap();
    let b = g.batch(&BoxDomain::line(1).unwrap(), 5_000, 2).unwrap();
    let k = empirical_cumulants(&b, 3, 4).unwrap();
    assert!(k[2].value.abs() < 3.0 * k[2].std_err);
}

#[test]
fn third_cumulant_rate() {
    let m = FieldModel::skewed_ma1();
    let sizes = [8usize, 16, 32, 64, 128];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &n in &sizes {
        let b = m.batch(&BoxDomain::line(n).unwrap(), 40_000, 100 + n as u64).unwrap();
        let k = empirical_cumulants(&b, 3, 1).unwrap();
        xs.push((n as f64).ln());
        ys.push(k[2].value.abs().ln());
    }
    let fit = genogram_clt::metrics::fit_rate(
        &sizes.iter().map(|&n| n as f64).collect::<Vec<_>>(),
        &ys.iter().map(|y| y.exp()).collect::<Vec<_>>(),
    )
    .unwrap();
    let slope = -fit.beta_hat;
    assert!((-0.7..=-0.3).contains(&slope), "slope {slope}");
}

#[test]
fn tail_profile_normal_batch() {
    let g = FieldModel::moving_average_1d(&[1.0], Innovation::StandardNormal).unwrap();
    let dom = BoxDomain::line(1).unwrap();
    let grid = genogram_clt::metrics::t_grid(3.0, 0.05);
    let mut ratio = 0.0;
    let seeds = 20;
    for s in 0..seeds {
        let small = g.batch(&dom, 1_000, 1_000 + s).unwrap();
        let big = g.batch(&dom, 4_000, 2_000 + s).unwrap();
        let a = tail_profiles(&small, 1.0, 0.5, &grid, 0.5).unwrap();
        let b = tail_profiles(&big, 1.0, 0.5, &grid, 0.5).unwrap();
        ratio += b.sup_weighted_dev / a.sup_weighted_dev / seeds as f64;
        let f0 = a.records[0].tail;
        assert!((f0 - 0.5).abs() <= 3.0 * 0.5 / (1_000f64).sqrt());
    }
    assert!((0.35..=0.65).contains(&ratio), "mean ratio {ratio}");
}
