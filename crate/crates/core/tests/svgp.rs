use distgp_core::svgp::{svgp_params, InducingInit};
use distgp_core::{Dataset, ExactGp, HyperParam, Hyperparameters, KernelSpec, Svgp, SvgpParam};
use distgp_testkit::{
    exact_lml, random_points, random_vector, rel_err, rel_err_mat, rel_err_vec, svgp_elbo, svgp_optimal_q,
    svgp_predict, OracleKernel,
};
use nalgebra::{DMatrix, DVector};

fn hp_with(ls: Vec<f64>, sf2: f64, noise: f64, z: DMatrix<f64>) -> Hyperparameters {
    Hyperparameters::new(KernelSpec::rbf(ls, sf2).unwrap(), noise)
        .unwrap()
        .with_inducing(z)
        .unwrap()
}

fn separated_inputs(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |i, _| i as f64 * 0.9)
}

#[test]
fn optimal_variational_matches_dense_oracle() {
    let x = random_points(3, 1, -1.0, 1.0, 1);
    let y = random_vector(3, 2);
    let z = DMatrix::from_column_slice(2, 1, &[-0.5, 0.5]);
    let hp = hp_with(vec![0.6], 1.3, 0.2, z.clone());
    let model = Svgp::fit(&hp, &Dataset::new(x.clone(), y.clone()).unwrap()).unwrap();
    let (m, s) = model.optimal_variational().unwrap();
    let (om, os) = svgp_optimal_q(&OracleKernel::rbf(vec![0.6], 1.3), 0.2, &z, &x, &y);
    assert!(rel_err_vec(&m, &om) <= 1e-9);
    assert!(rel_err_mat(&s, &os) <= 1e-9);
}

#[test]
fn zero_targets_give_zero_variational_mean_and_prediction() {
    let x = random_points(10, 2, -1.0, 1.0, 3);
    let z = random_points(4, 2, -1.0, 1.0, 4);
    let hp = hp_with(vec![0.5, 0.8], 1.0, 0.1, z);
    let model = Svgp::fit(&hp, &Dataset::new(x, DVector::zeros(10)).unwrap()).unwrap();
    assert_eq!(model.optimal_variational().unwrap().0.amax(), 0.0);
    let p = model.predict(&random_points(20, 2, -2.0, 2.0, 5)).unwrap();
    assert_eq!(p.mean.amax(), 0.0);
    assert!(p.variance.iter().all(|&v| v <= 1.0 + 1e-10));
}

#[test]
fn empty_data_recovers_prior() {
    let z = random_points(3, 1, -1.0, 1.0, 6);
    let hp = hp_with(vec![0.5], 2.0, 0.1, z.clone());
    let model = Svgp::fit(&hp, &Dataset::new(DMatrix::zeros(0, 1), DVector::zeros(0)).unwrap()).unwrap();
    let (_, s) = model.optimal_variational().unwrap();
    let kuu = OracleKernel::rbf(vec![0.5], 2.0).matrix(&z, &z);
    assert!(rel_err_mat(&s, &kuu) <= 1e-10);
}

#[test]
fn inducing_at_data_recovers_exact_model() {
    for (n, seed) in [(10, 11u64), (30, 12), (50, 13)] {
        let x = separated_inputs(n);
        let y = random_vector(n, seed);
        let data = Dataset::new(x.clone(), y).unwrap();
        let hp = hp_with(vec![0.7], 1.5, 0.1, x.clone());
        let sparse = Svgp::fit(&hp, &data).unwrap();
        let exact = ExactGp::fit(&hp, &data).unwrap();
        assert!((sparse.elbo() - exact.log_marginal_likelihood()).abs() <= 1e-6);
        let xs = random_points(25, 1, -1.0, n as f64, seed + 100);
        let pm = sparse.predict(&xs).unwrap().mean;
        let em = exact.posterior(&xs, false).unwrap().mean;
        assert!((pm - em).amax() <= 1e-6);
    }
}

#[test]
fn elbo_matches_dense_oracle_on_hand_instance() {
    let x = DMatrix::from_column_slice(3, 1, &[-1.0, 0.2, 0.9]);
    let y = DVector::from_vec(vec![0.3, -0.7, 1.1]);
    let z = DMatrix::from_column_slice(1, 1, &[0.1]);
    let hp = hp_with(vec![0.8], 1.1, 0.25, z.clone());
    let model = Svgp::fit(&hp, &Dataset::new(x.clone(), y.clone()).unwrap()).unwrap();
    let oracle = svgp_elbo(&OracleKernel::rbf(vec![0.8], 1.1), 0.25, &z, &x, &y);
    assert!((model.elbo() - oracle).abs() <= 1e-9);
}

#[test]
fn elbo_never_exceeds_lml() {
    for seed in 0..20u64 {
        let n = 10 + (seed as usize * 7) % 50;
        let m = 1 + (seed as usize * 3) % (n - 1).min(10);
        let d = 1 + (seed as usize) % 3;
        let x = random_points(n, d, -2.0, 2.0, seed);
        let y = random_vector(n, seed + 50);
        let z = random_points(m, d, -2.0, 2.0, seed + 90);
        let ls: Vec<f64> = (0..d).map(|i| 0.5 + 0.2 * i as f64).collect();
        let hp = hp_with(ls.clone(), 1.0, 0.05 + 0.01 * seed as f64, z.clone());
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let elbo = Svgp::fit(&hp, &data).unwrap().elbo();
        let lml = exact_lml(&OracleKernel::rbf(ls.clone(), 1.0), hp.noise_variance, &x, &y);
        assert!(lml - elbo >= -1e-8, "seed {seed}: {elbo} > {lml}");
        let oracle = svgp_elbo(&OracleKernel::rbf(ls, 1.0), hp.noise_variance, &z, &x, &y);
        assert!((elbo - oracle).abs() <= 1e-7 * oracle.abs().max(1.0));
    }
}

#[test]
fn predict_matches_dense_oracle() {
    let x = random_points(4, 1, -1.0, 1.0, 21);
    let y = random_vector(4, 22);
    let z = DMatrix::from_column_slice(2, 1, &[-0.4, 0.6]);
    let xs = random_points(7, 1, -1.5, 1.5, 23);
    let hp = hp_with(vec![0.9], 0.8, 0.15, z.clone());
    let p = Svgp::fit(&hp, &Dataset::new(x.clone(), y.clone()).unwrap())
        .unwrap()
        .predict(&xs)
        .unwrap();
    let o = svgp_predict(&OracleKernel::rbf(vec![0.9], 0.8), 0.15, &z, &x, &y, &xs);
    assert!(rel_err_vec(&p.mean, &o.mean) <= 1e-9);
    assert!(rel_err_vec(&p.variance, &o.variance) <= 1e-9);
}

#[test]
fn prior_term_dominates_explained_term() {
    let x = random_points(40, 2, -1.0, 1.0, 31);
    let z = random_points(8, 2, -1.0, 1.0, 32);
    let hp = hp_with(vec![0.4, 0.6], 1.0, 0.01, z);
    let model = Svgp::fit(&hp, &Dataset::new(x, random_vector(40, 33)).unwrap()).unwrap();
    let xs = random_points(50, 2, -1.5, 1.5, 34);
    let p = model.predict(&xs).unwrap();
    let explained = model.explained_variance(&xs).unwrap();
    // variance = k − prior + explained, so prior ≥ explained ⇔ variance ≤ k
    for i in 0..50 {
        assert!(1.0 - p.variance[i] >= -1e-10);
        assert!(explained[i] >= -1e-12);
    }
}

#[test]
fn empty_test_set() {
    let x = random_points(5, 1, -1.0, 1.0, 41);
    let hp = hp_with(vec![0.5], 1.0, 0.1, x.rows(0, 2).into_owned());
    let model = Svgp::fit(&hp, &Dataset::new(x, random_vector(5, 42)).unwrap()).unwrap();
    assert!(model.predict(&DMatrix::zeros(0, 1)).unwrap().is_empty());
}

#[test]
fn symmetric_instance_has_equal_lengthscale_gradients() {
    let pts = [(0.5, -0.5), (-0.5, 0.5), (1.0, 0.2), (0.2, 1.0), (-0.3, -0.8), (-0.8, -0.3)];
    let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { pts[i].0 } else { pts[i].1 });
    let y = DVector::from_vec(vec![1.0, 1.0, -0.5, -0.5, 0.3, 0.3]);
    let z = DMatrix::from_row_slice(2, 2, &[0.4, 0.4, -0.4, -0.4]);
    let hp = hp_with(vec![0.7, 0.7], 1.0, 0.1, z);
    let model = Svgp::fit(&hp, &Dataset::new(x, y).unwrap()).unwrap();
    let g = model
        .elbo_gradient(&[
            SvgpParam::Hyper(HyperParam::Lengthscale(0)),
            SvgpParam::Hyper(HyperParam::Lengthscale(1)),
        ])
        .unwrap();
    assert!((g[0] - g[1]).abs() <= 1e-6);
}

#[test]
fn finite_difference_error_is_second_order() {
    // With Z = X the bound is tight for every lengthscale, so the analytic
    // LML gradient is the reference.
    let x = separated_inputs(12);
    let data = Dataset::new(x.clone(), random_vector(12, 51)).unwrap();
    let hp = hp_with(vec![0.7], 1.0, 0.1, x);
    let p = HyperParam::Lengthscale(0);
    let truth = ExactGp::fit(&hp, &data).unwrap().lml_gradient(p).unwrap();
    let model = Svgp::fit(&hp, &data).unwrap();
    let e1 = (model.elbo_gradient_with_step(&[SvgpParam::Hyper(p)], 1e-2).unwrap()[0] - truth).abs();
    let e2 = (model.elbo_gradient_with_step(&[SvgpParam::Hyper(p)], 5e-3).unwrap()[0] - truth).abs();
    let ratio = e1 / e2;
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn gradient_vanishes_at_grid_scan_optimum() {
    let x = random_points(30, 1, -2.0, 2.0, 61);
    let y = x.column(0).map(|v| (2.0 * v).sin()) + random_vector(30, 62) * 0.1;
    let data = Dataset::new(x.clone(), y).unwrap();
    let z = DMatrix::from_fn(6, 1, |i, _| -2.0 + 0.8 * i as f64);
    let base = hp_with(vec![0.5], 1.0, 0.05, z);
    let elbo = |noise: f64| {
        Svgp::fit(&base.with_param(HyperParam::NoiseVariance, noise).unwrap(), &data)
            .unwrap()
            .elbo()
    };
    let grid: Vec<f64> = (0..400).map(|i| 1e-3 * (1.0f64 + 1e3).powf(i as f64 / 399.0)).collect();
    let best = grid
        .iter()
        .copied()
        .max_by(|a, b| elbo(*a).partial_cmp(&elbo(*b)).unwrap())
        .unwrap();
    let (mut lo, mut hi) = (best / 1.05, best * 1.05);
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if elbo(a) < elbo(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let opt = 0.5 * (lo + hi);
    let model = Svgp::fit(&base.with_param(HyperParam::NoiseVariance, opt).unwrap(), &data).unwrap();
    let g = model.elbo_gradient(&[SvgpParam::Hyper(HyperParam::NoiseVariance)]).unwrap()[0];
    assert!(g.abs() <= 1e-3, "gradient {g} at {opt}");
}

#[test]
fn inducing_gradient_matches_direct_difference() {
    let x = random_points(20, 2, -1.0, 1.0, 71);
    let data = Dataset::new(x, random_vector(20, 72)).unwrap();
    let z = random_points(4, 2, -1.0, 1.0, 73);
    let hp = hp_with(vec![0.6, 0.9], 1.0, 0.1, z.clone());
    let model = Svgp::fit(&hp, &data).unwrap();
    let params = svgp_params(&hp, true);
    assert_eq!(params.len(), 4 + 8);
    let g = model.elbo_gradient(&params).unwrap();
    let h = 1e-6;
    let shifted = |delta: f64| {
        let mut zz = z.clone();
        zz[(2, 1)] += delta;
        Svgp::fit(&hp.clone().with_inducing(zz).unwrap(), &data).unwrap().elbo()
    };
    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
    let pos = params
        .iter()
        .position(|p| *p == SvgpParam::Inducing { row: 2, col: 1 })
        .unwrap();
    assert!(rel_err(g[pos], fd) <= 1e-4);
}

#[test]
fn seeded_inducing_initialisation_is_reproducible() {
    let x = random_points(50, 2, 0.0, 1.0, 81);
    let a = InducingInit::RandomSubset { m: 10, seed: 3 }.generate(&x).unwrap();
    let b = InducingInit::RandomSubset { m: 10, seed: 3 }.generate(&x).unwrap();
    assert_eq!(a, b);
    for row in a.row_iter() {
        assert!(x.row_iter().any(|r| r == row));
    }
}
