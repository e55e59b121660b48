//! Acceptance suite. Prints one `PASS` or `FAIL` line per criterion and
//! exits non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,4,9` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use lsbo::config::{DatasetKind, ExperimentConfig};
use lsbo::experiment::{self, Problem, SweepOutput};
use lsbo_core::acquisition::{score, ts_select_from, AcquisitionKind, AcquisitionSpec};
use lsbo_core::bounds::{fit_ellipsoid, fit_hull, nearest_rank_percentile, BoundsKind, BoundsRegion};
use lsbo_core::gp::{GplvmModel, PredictiveGaussian, SqExpArdKernel};
use lsbo_core::ndcore::{adam_step, AdamState, Graph, Mat, Tensor, Var};
use lsbo_core::training::{joint_objective_graph, Regime};
use lsbo_core::vae::{standard_normal_mat, Likelihood, VaeModel};
use lsbo_core::datasets::{SyntheticBenchmark, SyntheticObjective};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Check); 9] = [
        (1, "autodiff gradients match finite differences", c1_autodiff),
        (2, "sparse GP matches the exact GP", c2_svgp_oracle),
        (3, "acquisition scores match quadrature", c3_acquisition),
        (4, "geometry oracles", c4_geometry),
        (5, "synthetic benchmark end to end", c5_synthetic),
        (6, "shape directional results", c6_shape),
        (7, "shape d=4 beats d=3", c7_dimension),
        (8, "round-trip distance grows outside the data", c8_diagnostics),
        (9, "identical reruns give identical files", c9_determinism),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {n} ({name}): {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {d} [{secs:.1} s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-5;

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn random_mat(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

/// Worst relative error of `Σ w ⊙ op(inputs)` against central differences.
fn op_error(inputs: Vec<Mat>, build: &Build, rng: &mut ChaCha8Rng) -> f64 {
    let eval = |xs: &[Mat], w: &Mat| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|m| g.leaf(m.clone(), true)).collect();
        let out = build(&mut g, &vars);
        let wv = g.constant(w.clone());
        let p = g.mul(out, wv);
        let root = g.sum(p);
        (g, vars, root)
    };
    let shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.leaf(m.clone(), true)).collect();
        let out = build(&mut g, &vars);
        g.value(out).shape()
    };
    let w = random_mat(shape.0, shape.1, -1.0, 1.0, rng);
    let (g, vars, root) = eval(&inputs, &w);
    let grads = g.backward(root).unwrap();
    let mut worst: f64 = 0.0;
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Mat::zeros(inputs[p].rows(), inputs[p].cols()));
        for k in 0..inputs[p].data().len() {
            let mut plus = inputs.clone();
            plus[p].data_mut()[k] += FD_STEP;
            let mut minus = inputs.clone();
            minus[p].data_mut()[k] -= FD_STEP;
            let f = |xs: &[Mat]| {
                let (g, _, r) = eval(xs, &w);
                g.scalar(r)
            };
            let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[k], numeric, 1e-6));
        }
    }
    worst
}

fn spd(g: &mut Graph, x: Var) -> Var {
    let n = g.value(x).rows();
    let t = g.transpose(x);
    let s = g.add(x, t);
    let s = g.scale(s, 0.5);
    let mut shift = Mat::zeros(n, n);
    shift.add_diag(4.0);
    let shift = g.constant(shift);
    g.add(s, shift)
}

#[allow(clippy::type_complexity)]
fn op_cases() -> Vec<(&'static str, Vec<(usize, usize, f64, f64)>, Build)> {
    let sym = (-1.5, 1.5);
    vec![
        ("add", vec![(3, 4, sym.0, sym.1); 2], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![(3, 4, sym.0, sym.1); 2], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![(3, 4, sym.0, sym.1); 2], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("neg", vec![(2, 5, -2.0, 2.0)], Box::new(|g, v| g.neg(v[0]))),
        ("scale", vec![(2, 5, -2.0, 2.0)], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("add_scalar", vec![(2, 5, -2.0, 2.0)], Box::new(|g, v| g.add_scalar(v[0], 0.3))),
        ("mul_scalar", vec![(3, 3, -1.0, 1.0), (1, 1, 0.5, 2.0)], Box::new(|g, v| g.mul_scalar(v[0], v[1]))),
        ("add_row", vec![(4, 3, -1.0, 1.0), (1, 3, -1.0, 1.0)], Box::new(|g, v| g.add_row(v[0], v[1]))),
        ("mul_row", vec![(4, 3, -1.0, 1.0), (1, 3, -1.0, 1.0)], Box::new(|g, v| g.mul_row(v[0], v[1]))),
        ("matmul", vec![(2, 3, -1.0, 1.0), (3, 4, -1.0, 1.0)], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("transpose", vec![(2, 5, -1.0, 1.0)], Box::new(|g, v| g.transpose(v[0]))),
        ("exp", vec![(3, 3, -2.0, 2.0)], Box::new(|g, v| g.exp(v[0]))),
        ("ln", vec![(3, 3, 0.2, 3.0)], Box::new(|g, v| g.ln(v[0]))),
        ("tanh", vec![(3, 3, -2.0, 2.0)], Box::new(|g, v| g.tanh(v[0]))),
        ("sigmoid", vec![(3, 3, -4.0, 4.0)], Box::new(|g, v| g.sigmoid(v[0]))),
        ("softplus", vec![(3, 3, -4.0, 4.0)], Box::new(|g, v| g.softplus(v[0]))),
        ("square", vec![(3, 3, -2.0, 2.0)], Box::new(|g, v| g.square(v[0]))),
        ("sqrt", vec![(3, 3, 0.2, 3.0)], Box::new(|g, v| g.sqrt(v[0]))),
        // both sides of the kinks at ±1; no draw lands within a step of them
        ("clamp", vec![(3, 3, -3.0, 3.0)], Box::new(|g, v| g.clamp(v[0], -1.0, 1.0))),
        ("cb_log_norm", vec![(2, 4, -4.0, 4.0)], Box::new(|g, v| g.cb_log_norm(v[0]))),
        ("sum", vec![(3, 4, -1.0, 1.0)], Box::new(|g, v| g.sum(v[0]))),
        ("sum_rows", vec![(3, 4, -1.0, 1.0)], Box::new(|g, v| g.sum_rows(v[0]))),
        ("slice_cols", vec![(3, 5, -1.0, 1.0)], Box::new(|g, v| g.slice_cols(v[0], 1, 3))),
        ("sq_dist", vec![(4, 2, -1.0, 1.0), (3, 2, -1.0, 1.0)], Box::new(|g, v| g.sq_dist(v[0], v[1]))),
        ("diag", vec![(4, 4, -1.0, 1.0)], Box::new(|g, v| g.diag(v[0]))),
        ("lower_from_raw", vec![(4, 4, -1.0, 1.0)], Box::new(|g, v| g.lower_from_raw(v[0]))),
        (
            "cholesky",
            vec![(5, 5, -1.0, 1.0)],
            Box::new(|g, v| {
                let a = spd(g, v[0]);
                g.cholesky(a).unwrap()
            }),
        ),
        (
            "solve_lower",
            vec![(4, 4, -0.5, 0.5), (4, 3, -1.0, 1.0)],
            Box::new(|g, v| {
                let l = g.lower_from_raw(v[0]);
                g.solve_lower(l, v[1])
            }),
        ),
        (
            "solve_lower_t",
            vec![(4, 4, -0.5, 0.5), (4, 3, -1.0, 1.0)],
            Box::new(|g, v| {
                let l = g.lower_from_raw(v[0]);
                g.solve_lower_t(l, v[1])
            }),
        ),
    ]
}

/// Central differences over every entry of every tensor from `params`.
fn numeric_gradients<M: Clone>(
    model: &M,
    params: impl Fn(&mut M) -> Vec<&mut Tensor>,
    f: impl Fn(&M) -> f64,
) -> Vec<Vec<f64>> {
    let mut probe = model.clone();
    let lens: Vec<usize> = params(&mut probe).iter().map(|t| t.len()).collect();
    lens.iter()
        .enumerate()
        .map(|(p, &len)| {
            (0..len)
                .map(|k| {
                    let mut plus = model.clone();
                    params(&mut plus)[p].data_mut()[k] += FD_STEP;
                    let mut minus = model.clone();
                    params(&mut minus)[p].data_mut()[k] -= FD_STEP;
                    (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
                })
                .collect()
        })
        .collect()
}

fn worst(analytic: &[Vec<f64>], numeric: &[Vec<f64>], floor: f64) -> f64 {
    let mut w: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), n.len());
        for (x, y) in a.iter().zip(n) {
            w = w.max(rel_err(*x, *y, floor));
        }
    }
    w
}

fn grads_of(grads: &lsbo_core::ndcore::Gradients, vars: &[Var], params: &[&Tensor]) -> Vec<Vec<f64>> {
    vars.iter()
        .zip(params)
        .map(|(v, t)| grads.get(*v).map(|m| m.data().to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect()
}

fn random_q(gp: &mut GplvmModel, rng: &mut ChaCha8Rng) {
    let m = gp.num_inducing();
    let mean: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..0.5)).collect();
    let l = Mat::from_fn(m, m, |i, j| match j.cmp(&i) {
        std::cmp::Ordering::Less => rng.random_range(-0.2..0.2),
        std::cmp::Ordering::Equal => rng.random_range(0.3..0.9),
        std::cmp::Ordering::Greater => 0.0,
    });
    gp.set_q(&mean, &l).unwrap();
}

fn small_gp(rng: &mut ChaCha8Rng) -> GplvmModel {
    let kernel = SqExpArdKernel::new(rng.random_range(0.7..1.5), vec![rng.random_range(0.6..1.4), rng.random_range(0.6..1.4)]).unwrap();
    let mut gp = GplvmModel::new(kernel, random_mat(4, 2, -1.0, 1.0, rng), rng.random_range(0.1..0.4)).unwrap();
    random_q(&mut gp, rng);
    gp
}

fn c1_autodiff() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_op: (f64, &str) = (0.0, "");
    let mut ops = 0;
    for (name, shapes, build) in op_cases() {
        for _ in 0..3 {
            let inputs = shapes.iter().map(|&(r, c, lo, hi)| random_mat(r, c, lo, hi, &mut rng)).collect();
            let e = op_error(inputs, &build, &mut rng);
            if e > worst_op.0 {
                worst_op = (e, name);
            }
        }
        ops += 1;
    }

    let mut objectives: Vec<(&str, f64)> = Vec::new();
    // VAE ELBO, every likelihood
    for lik in [Likelihood::Bernoulli, Likelihood::ContinuousBernoulli, Likelihood::Gaussian] {
        let mut e: f64 = 0.0;
        for _ in 0..3 {
            let mut vae = VaeModel::new(5, 2, lik, &mut rng).unwrap();
            vae.log_noise_mut().data_mut()[0] = -0.3;
            let x = Mat::from_fn(3, 5, |_, _| match lik {
                Likelihood::Bernoulli => f64::from(rng.random_bool(0.4)),
                Likelihood::ContinuousBernoulli => rng.random_range(0.05..0.95),
                Likelihood::Gaussian => rng.random_range(-1.0..1.0),
            });
            let eps = standard_normal_mat(3, 2, &mut rng);
            let mut g = Graph::new();
            let vars = vae.register(&mut g);
            let xv = g.constant(x.clone());
            let ev = g.constant(eps.clone());
            let out = vae.elbo_graph(&mut g, &vars, xv, ev);
            let grads = g.backward(out.elbo).unwrap();
            let analytic = grads_of(&grads, &vars.all(), &vae.params());
            let numeric = numeric_gradients(
                &vae,
                |m: &mut VaeModel| m.params_mut().into_iter().collect(),
                |m: &VaeModel| m.elbo_batch_with_noise(&x, &eps).unwrap().elbo,
            );
            e = e.max(worst(&analytic, &numeric, 1e-6));
        }
        objectives.push((lik.name(), e));
    }

    // sparse GP bound
    let mut e_svgp: f64 = 0.0;
    for _ in 0..3 {
        let gp = small_gp(&mut rng);
        let z = random_mat(8, 2, -1.5, 1.5, &mut rng);
        let y: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let v = gp.register(&mut g);
        let zv = g.constant(z.clone());
        let yv = g.constant(Mat::column(&y));
        let out = gp.elbo_graph(&mut g, &v, zv, yv).unwrap();
        let grads = g.backward(out.elbo).unwrap();
        let analytic = grads_of(&grads, &v.all(), &gp.params());
        let numeric = numeric_gradients(
            &gp,
            |m: &mut GplvmModel| m.params_mut().into_iter().collect(),
            |m| m.svgp_elbo(&z, &y).unwrap(),
        );
        e_svgp = e_svgp.max(worst(&analytic, &numeric, 1e-6));
    }
    objectives.push(("sparse GP", e_svgp));

    // GPLVM bound with reparameterized inputs, in the GP parameters and the
    // encoding means and log-variances
    let mut e_gplvm: f64 = 0.0;
    for _ in 0..3 {
        #[derive(Clone)]
        struct Lvm(GplvmModel, Tensor, Tensor);
        let gp = small_gp(&mut rng);
        let mean = Tensor::from_mat(&random_mat(6, 2, -1.0, 1.0, &mut rng));
        let logvar = Tensor::from_mat(&random_mat(6, 2, -3.0, -0.5, &mut rng));
        let eps = standard_normal_mat(6, 2, &mut rng);
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let build = |m: &Lvm, g: &mut Graph| {
            let v = m.0.register(g);
            let mu = g.leaf(m.1.to_mat(), true);
            let lv = g.leaf(m.2.to_mat(), true);
            let half = g.scale(lv, 0.5);
            let sd = g.exp(half);
            let ev = g.constant(eps.clone());
            let noise = g.mul(sd, ev);
            let z = g.add(mu, noise);
            let yv = g.constant(Mat::column(&y));
            let out = m.0.elbo_graph(g, &v, z, yv).unwrap();
            (v, mu, lv, out.elbo)
        };
        let model = Lvm(gp, mean, logvar);
        let mut g = Graph::new();
        let (v, mu, lv, root) = build(&model, &mut g);
        let grads = g.backward(root).unwrap();
        let mut vars = v.all().to_vec();
        vars.extend([mu, lv]);
        let mut params: Vec<&Tensor> = model.0.params().to_vec();
        params.extend([&model.1, &model.2]);
        let analytic = grads_of(&grads, &vars, &params);
        let numeric = numeric_gradients(
            &model,
            |m: &mut Lvm| {
                let Lvm(gp, a, b) = m;
                let mut p: Vec<&mut Tensor> = gp.params_mut().into_iter().collect();
                p.push(a);
                p.push(b);
                p
            },
            |m| {
                let mut g = Graph::new();
                let (_, _, _, r) = build(m, &mut g);
                g.scalar(r)
            },
        );
        e_gplvm = e_gplvm.max(worst(&analytic, &numeric, 1e-6));
    }
    objectives.push(("GPLVM", e_gplvm));

    // labelled joint objective over the VAE and the GP together
    let mut e_joint: f64 = 0.0;
    for _ in 0..3 {
        #[derive(Clone)]
        struct Pair(VaeModel, GplvmModel);
        let xo = Mat::from_fn(3, 5, |_, _| f64::from(rng.random_bool(0.5)));
        let yo: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        let vae = VaeModel::new(5, 2, Likelihood::Bernoulli, &mut rng).unwrap();
        let mut gp = small_gp(&mut rng);
        gp.set_output_transform(lsbo_core::gp::OutputTransform::standardizing(&yo));
        let ev = standard_normal_mat(3, 2, &mut rng);
        let eg = standard_normal_mat(3, 2, &mut rng);
        let pair = Pair(vae, gp);
        let value = |p: &Pair, g: &mut Graph| {
            let vv = p.0.register(g);
            let gv = p.1.register(g);
            let parts = joint_objective_graph(&p.0, &p.1, g, &vv, &gv, &xo, &yo, &ev, &eg).unwrap();
            (vv, gv, parts.objective)
        };
        let mut g = Graph::new();
        let (vv, gv, root) = value(&pair, &mut g);
        let grads = g.backward(root).unwrap();
        let mut vars = vv.all().to_vec();
        vars.extend(gv.all());
        let mut params: Vec<&Tensor> = pair.0.params().to_vec();
        params.extend(pair.1.params());
        let analytic = grads_of(&grads, &vars, &params);
        let numeric = numeric_gradients(
            &pair,
            |p: &mut Pair| {
                let Pair(a, b) = p;
                let mut v: Vec<&mut Tensor> = a.params_mut().into_iter().collect();
                v.extend(b.params_mut());
                v
            },
            |p| {
                let mut g = Graph::new();
                let (_, _, r) = value(p, &mut g);
                g.scalar(r)
            },
        );
        e_joint = e_joint.max(worst(&analytic, &numeric, 1e-6));
    }
    objectives.push(("joint", e_joint));

    let obj_worst = objectives.iter().map(|o| o.1).fold(0.0, f64::max);
    let listing: Vec<String> = objectives.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    ensure(
        worst_op.0 < 1e-4 && obj_worst < 1e-3,
        format!(
            "{ops} ops, worst {:.1e} ({}) vs 1e-4; objectives {} vs 1e-3",
            worst_op.0,
            worst_op.1,
            listing.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 2

fn se_gram(a: &Mat, b: &Mat, variance: f64, ls: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.rows(), b.rows(), |i, j| {
        let r2: f64 = (0..ls.len()).map(|q| ((a[(i, q)] - b[(j, q)]) / ls[q]).powi(2)).sum();
        variance * (-0.5 * r2).exp()
    })
}

/// Exact zero-mean GP regression: predictive means at `xs` and the log
/// marginal likelihood of `y`.
fn exact_gp(x: &Mat, y: &[f64], xs: &Mat, variance: f64, ls: &[f64], noise: f64) -> (Vec<f64>, f64) {
    let n = x.rows();
    let k = se_gram(x, x, variance, ls) + DMatrix::identity(n, n) * noise;
    let chol = k.cholesky().expect("exact gp cholesky");
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let mean = se_gram(x, xs, variance, ls).transpose() * &alpha;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let lml = -0.5 * yv.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    (mean.as_slice().to_vec(), lml)
}

fn c2_svgp_oracle() -> Check {
    let mut worst_rmse: f64 = 0.0;
    let mut worst_gap = f64::INFINITY;
    let mut worst_unconverged_gap = f64::INFINITY;
    let mut worst_grad: f64 = 0.0;
    let mut max_steps = 0;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let bench = SyntheticBenchmark::new(2, 2, SyntheticObjective::Quadratic, inst).unwrap();
        let x = bench.sample(30, &mut rng);
        let y: Vec<f64> = (0..30)
            .map(|i| bench.eval(x.row_slice(i)).unwrap() + 0.05 * rng.random_range(-1.0..1.0))
            .collect();
        let kernel = SqExpArdKernel::new(1.0, vec![1.0, 1.0]).unwrap();
        let mut gp = GplvmModel::new(kernel, x.clone(), 0.1).unwrap();

        // any q is a lower bound, optimized or not
        random_q(&mut gp, &mut rng);
        let (_, lml0) = {
            let k = gp.kernel();
            exact_gp(&x, &y, &x, k.variance, &k.lengthscales, gp.noise_variance())
        };
        worst_unconverged_gap = worst_unconverged_gap.min(lml0 - gp.svgp_elbo(&x, &y).unwrap());

        // q at its optimum, hyperparameters by Adam until the bound stops
        // moving; inducing inputs stay at the training inputs
        let mut adam = AdamState::new(0.05);
        let mut grad_norm = 0.0;
        let (mut last, mut still, mut steps) = (f64::NEG_INFINITY, 0, 0);
        while still < 20 && steps < 5000 {
            gp.set_optimal_q(&x, &y).unwrap();
            let mut g = Graph::new();
            let v = gp.register_hyperparameters(&mut g);
            let zv = g.constant(x.clone());
            let yv = g.constant(Mat::column(&y));
            let e = gp.elbo_graph(&mut g, &v, zv, yv).unwrap();
            let value = g.scalar(e.elbo);
            still = if (value - last).abs() < 1e-9 * (1.0 + value.abs()) { still + 1 } else { 0 };
            last = value;
            let loss = g.neg(e.elbo);
            let grads = g.backward(loss).unwrap();
            let hv = [v.log_variance, v.log_lengthscales, v.log_noise_variance];
            let mut hp = gp.hyper_params_mut();
            let (head, _) = hp.split_at_mut(3);
            grad_norm = 0.0;
            for (var, p) in hv.iter().zip(head.iter_mut()) {
                grads.write_to(*var, p).unwrap();
                grad_norm += p.grad().unwrap().iter().map(|g| g * g).sum::<f64>();
            }
            adam_step(head, &mut adam).unwrap();
            gp.clamp_hyperparameters();
            steps += 1;
        }
        max_steps = max_steps.max(steps);
        gp.set_optimal_q(&x, &y).unwrap();
        worst_grad = worst_grad.max(grad_norm.sqrt());

        let k = gp.kernel();
        // held-out inputs from the same distribution as the training set
        let xs = bench.sample(200, &mut rng);
        let (exact_mean, lml) = exact_gp(&x, &y, &xs, k.variance, &k.lengthscales, gp.noise_variance());
        let pred: Vec<PredictiveGaussian> = gp.predictor().unwrap().predict_batch(&xs).unwrap();
        let rmse = (pred.iter().zip(&exact_mean).map(|(p, m)| (p.mean - m).powi(2)).sum::<f64>() / 200.0).sqrt();
        worst_rmse = worst_rmse.max(rmse);
        worst_gap = worst_gap.min(lml - gp.svgp_elbo(&x, &y).unwrap());
    }
    // the bound is tight at the optimum, so allow rounding in the comparison
    ensure(
        worst_rmse < 1e-2 && worst_gap >= -1e-8 && worst_unconverged_gap >= 0.0,
        format!(
            "20 instances: worst mean RMSE {worst_rmse:.2e} vs 1e-2, min(log marginal − bound) {worst_gap:.2e} at the optimum and {worst_unconverged_gap:.2e} for random q, ≤ {max_steps} Adam steps, final gradient norm ≤ {worst_grad:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn gauss(f: f64, mu: f64, sigma: f64) -> f64 {
    let u = (f - mu) / sigma;
    (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

fn c3_acquisition() -> Check {
    const TAIL: f64 = 14.0;
    const PANELS: usize = 20_000;
    let y_best: f64 = 0.3;
    let mut w: f64 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            let mu = -2.0 + 0.45 * i as f64;
            let sigma = 0.05 * 1.6f64.powi(j);
            let p = PredictiveGaussian { mean: mu, variance: sigma * sigma };
            let (lo, hi) = (mu - TAIL * sigma, mu + TAIL * sigma);
            for xi in [0.0, 0.1] {
                let t = y_best - xi;
                let ei = simpson(|f| (t - f) * gauss(f, mu, sigma), lo, t.min(hi), PANELS);
                let pi = simpson(|f| gauss(f, mu, sigma), lo, t.min(hi), PANELS);
                let se = AcquisitionSpec { xi, ..AcquisitionSpec::with_kind(AcquisitionKind::Ei) };
                let sp = AcquisitionSpec { xi, ..AcquisitionSpec::with_kind(AcquisitionKind::Pi) };
                w = w.max((score(&se, &p, y_best) - ei).abs());
                w = w.max((score(&sp, &p, y_best) - pi).abs());
            }
            let m = simpson(|f| f * gauss(f, mu, sigma), lo, hi, PANELS);
            let v = simpson(|f| (f - m) * (f - m) * gauss(f, mu, sigma), lo, hi, PANELS);
            for beta in [0.5, 2.0] {
                let sl = AcquisitionSpec { lcb_beta: beta, ..AcquisitionSpec::with_kind(AcquisitionKind::Lcb) };
                w = w.max((score(&sl, &p, y_best) - (beta * v.sqrt() - m)).abs());
            }
        }
    }

    // posterior symmetric about 0: one observation at the centre, inducing
    // inputs and candidates mirrored
    let kernel = SqExpArdKernel::new(1.0, vec![0.7]).unwrap();
    let inducing = Mat::from_rows(&[vec![-1.0], vec![0.0], vec![1.0]]);
    let mut gp = GplvmModel::new(kernel, inducing, 0.05).unwrap();
    gp.set_optimal_q(&Mat::from_rows(&[vec![0.0]]), &[0.4]).unwrap();
    let cands = Mat::from_rows(&[vec![-0.8], vec![0.8]]);
    let (pl, pr) = (gp.predict(&[-0.8]).unwrap(), gp.predict(&[0.8]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 1000;
    let left = (0..draws)
        .filter(|_| ts_select_from(&gp, &cands, &mut rng).unwrap().z[0] < 0.0)
        .count();
    let half = 2.5758 * (draws as f64 * 0.25).sqrt();
    let (lo, hi) = ((draws as f64 / 2.0 - half).ceil() as usize, (draws as f64 / 2.0 + half).floor() as usize);
    ensure(
        w < 1e-6 && (lo..=hi).contains(&left) && (pl.mean - pr.mean).abs() < 1e-12 && (pl.variance - pr.variance).abs() < 1e-12,
        format!("worst score error {w:.1e} vs 1e-6 over 100 (μ, σ); TS chose the left point {left}/{draws}, 99% band [{lo}, {hi}]"),
    )
}

// ---------------------------------------------------------------- 4

fn grid_enclosing_area(z: &Mat) -> f64 {
    let col = |q: usize| (0..z.rows()).map(move |i| z[(i, q)]);
    let lo = [col(0).fold(f64::INFINITY, f64::min), col(1).fold(f64::INFINITY, f64::min)];
    let hi = [col(0).fold(f64::NEG_INFINITY, f64::max), col(1).fold(f64::NEG_INFINITY, f64::max)];
    let mut best = f64::INFINITY;
    let steps = 40;
    for a in 0..=steps {
        for b in 0..=steps {
            let cx = lo[0] + (hi[0] - lo[0]) * a as f64 / steps as f64;
            let cy = lo[1] + (hi[1] - lo[1]) * b as f64 / steps as f64;
            for k in 0..60 {
                let (s, c) = (std::f64::consts::PI * k as f64 / 60.0).sin_cos();
                let uv: Vec<(f64, f64)> = (0..z.rows())
                    .map(|i| {
                        let (dx, dy) = (z[(i, 0)] - cx, z[(i, 1)] - cy);
                        (c * dx + s * dy, -s * dx + c * dy)
                    })
                    .collect();
                for r in 0..80 {
                    let ratio = 20.0f64.powf(2.0 * r as f64 / 79.0 - 1.0);
                    let b2 = uv.iter().map(|(u, v)| u * u / (ratio * ratio) + v * v).fold(0.0, f64::max);
                    best = best.min(std::f64::consts::PI * ratio * b2);
                }
            }
        }
    }
    best
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn monotone_chain(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let half = |it: &mut dyn Iterator<Item = (f64, f64)>| {
        let mut h: Vec<(f64, f64)> = Vec::new();
        for p in it {
            while h.len() >= 2 && cross(h[h.len() - 2], h[h.len() - 1], p) <= 0.0 {
                h.pop();
            }
            h.push(p);
        }
        h.pop();
        h
    };
    let mut hull = half(&mut pts.clone().into_iter());
    hull.extend(half(&mut pts.into_iter().rev()));
    hull
}

fn c4_geometry() -> Check {
    let square = Mat::from_rows(&[vec![-1.0, -1.0], vec![1.0, -1.0], vec![1.0, 1.0], vec![-1.0, 1.0]]);
    let BoundsRegion::Ellipsoid { center, matrix, .. } = fit_ellipsoid(&square, 1e-6).unwrap() else {
        return Err("square corners did not give an ellipsoid".into());
    };
    let sq_err = center
        .iter()
        .map(|c| c.abs())
        .chain([(matrix[(0, 0)] - 0.5).abs(), matrix[(0, 1)].abs(), matrix[(1, 0)].abs(), (matrix[(1, 1)] - 0.5).abs()])
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..5 {
        let z = Mat::from_fn(9, 2, |_, q| rng.random_range(-1.0..1.0) * if q == 0 { 2.0 } else { 0.7 });
        let BoundsRegion::Ellipsoid { matrix, .. } = fit_ellipsoid(&z, 1e-6).unwrap() else {
            return Err("random set did not give an ellipsoid".into());
        };
        let det = matrix[(0, 0)] * matrix[(1, 1)] - matrix[(0, 1)] * matrix[(1, 0)];
        worst_ratio = worst_ratio.max(std::f64::consts::PI / det.sqrt() / grid_enclosing_area(&z));
    }

    let mut agree = 0;
    let mut checked = 0;
    while checked < 1000 {
        let pts: Vec<(f64, f64)> = (0..25).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let region = fit_hull(&Mat::from_rows(&pts.iter().map(|p| vec![p.0, p.1]).collect::<Vec<_>>())).unwrap();
        let poly = monotone_chain(pts);
        for _ in 0..250 {
            let q = (rng.random_range(-1.3..1.3), rng.random_range(-1.3..1.3));
            let margins: Vec<f64> = (0..poly.len()).map(|k| cross(poly[k], poly[(k + 1) % poly.len()], q)).collect();
            if margins.iter().any(|m| m.abs() < 1e-9) {
                continue;
            }
            checked += 1;
            agree += usize::from(region.contains(&[q.0, q.1]) == margins.iter().all(|m| *m > 0.0));
        }
    }

    let mut rank_ok = true;
    let mut sets = 0;
    for n in 1..=5usize {
        for code in 0..5usize.pow(n as u32) {
            let v: Vec<f64> = (0..n).map(|k| ((code / 5usize.pow(k as u32)) % 5) as f64).collect();
            for p in 1..=100 {
                let r = nearest_rank_percentile(&v, p as f64).unwrap();
                let need = p as f64 / 100.0 * n as f64;
                let at_most = v.iter().filter(|x| **x <= r).count() as f64;
                let below = v.iter().filter(|x| **x < r).count() as f64;
                rank_ok &= v.contains(&r) && at_most >= need - 1e-12 && below < need - 1e-12;
            }
            sets += 1;
        }
    }
    ensure(
        sq_err < 1e-3 && worst_ratio <= 1.05 && agree == checked && rank_ok,
        format!(
            "square MVEE error {sq_err:.1e}; MVEE/grid area ≤ {worst_ratio:.4}; hull agreed on {agree}/{checked} queries; nearest rank exact on {sets} sets × 100 percentiles: {rank_ok}"
        ),
    )
}

// ---------------------------------------------------------------- 5..9

fn seeds10() -> Vec<u64> {
    (0..10).collect()
}

fn c5_synthetic() -> Check {
    let mut cfg = ExperimentConfig {
        dataset: DatasetKind::Synthetic,
        latent_dims: vec![2],
        acquisitions: vec![AcquisitionKind::Ei, AcquisitionKind::Random],
        seeds: seeds10(),
        budget: 100,
        ..ExperimentConfig::default()
    };
    cfg.data.num_train = 2000;
    cfg.data.ambient_dim = 20;
    cfg.data.intrinsic_dim = 2;
    let out = experiment::run_sweep(&cfg, 1, None).map_err(|e| e.to_string())?;
    let ei = out.cell(Regime::Disjoint, 2, BoundsKind::Hypercube, AcquisitionKind::Ei).unwrap();
    let rnd = out.cell(Regime::Disjoint, 2, BoundsKind::Hypercube, AcquisitionKind::Random).unwrap();
    if !ei.complete() || !rnd.complete() {
        return Err(format!("failed runs: {:?} {:?}", ei.failures, rnd.failures));
    }

    let bench = SyntheticBenchmark::new(20, 2, SyntheticObjective::Quadratic, cfg.data.benchmark_seed).unwrap();
    let probes = bench.sample(100_000, &mut ChaCha8Rng::seed_from_u64(12345));
    let oracle = (0..probes.rows())
        .map(|i| bench.eval(probes.row_slice(i)).unwrap())
        .fold(f64::INFINITY, f64::min);

    let ei_final = ei.final_values();
    let rnd_final = rnd.final_values();
    let mean = ei_final.iter().map(|v| v.1).sum::<f64>() / ei_final.len() as f64;
    let wins = ei_final.iter().zip(&rnd_final).filter(|(a, b)| a.1 < b.1).count();
    ensure(
        (mean - oracle).abs() <= 0.05 && wins >= 8,
        format!("EI mean final {mean:.3e}, random-search oracle {oracle:.3e} (gap {:.3e} vs 0.05); EI beat random on {wins}/10 seeds", mean - oracle),
    )
}

fn shape_cfg(regime: Regime, d: usize, acqs: Vec<AcquisitionKind>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetKind::Shape,
        regimes: vec![regime],
        latent_dims: vec![d],
        acquisitions: acqs,
        seeds: seeds10(),
        budget: 100,
        ..ExperimentConfig::default()
    };
    cfg.data.num_train = 2000;
    cfg
}

fn shape_problem() -> &'static Problem {
    static P: OnceLock<Problem> = OnceLock::new();
    P.get_or_init(|| experiment::build_problem(&shape_cfg(Regime::Disjoint, 4, vec![])).unwrap())
}

fn shape_sweep(regime: Regime, d: usize, acqs: &[AcquisitionKind]) -> &'static SweepOutput {
    static DISJOINT4: OnceLock<SweepOutput> = OnceLock::new();
    static JOINT4: OnceLock<SweepOutput> = OnceLock::new();
    static DISJOINT3: OnceLock<SweepOutput> = OnceLock::new();
    let slot = match (regime, d) {
        (Regime::Disjoint, 4) => &DISJOINT4,
        (Regime::Joint, 4) => &JOINT4,
        (Regime::Disjoint, 3) => &DISJOINT3,
        _ => unreachable!("no sweep for {regime:?} d={d}"),
    };
    slot.get_or_init(|| {
        let cfg = shape_cfg(regime, d, acqs.to_vec());
        experiment::run_sweep_on(&cfg, shape_problem(), 1, None).unwrap()
    })
}

/// Final mean of the normalized curve, requiring every seed to finish.
fn final_mean(out: &SweepOutput, regime: Regime, d: usize, acq: AcquisitionKind) -> Result<f64, String> {
    let cell = out.cell(regime, d, BoundsKind::Hypercube, acq).ok_or("missing cell")?;
    if !cell.complete() {
        return Err(format!("{}: failed runs {:?}", cell.key.name(), cell.failures));
    }
    cell.curve.as_ref().and_then(|c| c.final_mean()).ok_or_else(|| "empty curve".into())
}

fn c6_shape() -> Check {
    use AcquisitionKind::{Lcb, Pi};
    let disjoint = shape_sweep(Regime::Disjoint, 4, &[Lcb, Pi]);
    let joint = shape_sweep(Regime::Joint, 4, &[Lcb]);
    let lcb = final_mean(disjoint, Regime::Disjoint, 4, Lcb)?;
    let pi = final_mean(disjoint, Regime::Disjoint, 4, Pi)?;
    let jl = final_mean(joint, Regime::Joint, 4, Lcb)?;
    let (a, b, c) = (lcb < 0.0, lcb <= pi, jl <= lcb);
    let mark = |ok: bool| if ok { "ok" } else { "not met" };
    ensure(
        a && b && c,
        format!(
            "(a) disjoint LCB mean normalized best {lcb:.3} < 0 {}; (b) LCB {lcb:.3} ≤ PI {pi:.3} {}; (c) joint {jl:.3} ≤ disjoint {lcb:.3} {}",
            mark(a),
            mark(b),
            mark(c)
        ),
    )
}

fn c7_dimension() -> Check {
    use AcquisitionKind::{Lcb, Pi};
    let d4 = final_mean(shape_sweep(Regime::Disjoint, 4, &[Lcb, Pi]), Regime::Disjoint, 4, Lcb)?;
    let d3 = final_mean(shape_sweep(Regime::Disjoint, 3, &[Lcb]), Regime::Disjoint, 3, Lcb)?;
    ensure(d4 < d3, format!("LCB mean normalized final value d=4 {d4:.3} vs d=3 {d3:.3}"))
}

fn c8_diagnostics() -> Check {
    let mut cfg = shape_cfg(Regime::Disjoint, 2, vec![AcquisitionKind::Lcb]);
    cfg.diagnose.grid_width = 40;
    cfg.diagnose.grid_height = 40;
    let out = experiment::diagnose(&cfg, 0, None).map_err(|e| e.to_string())?;
    let inside: Vec<f64> = out.cells.iter().filter(|c| c.inside).map(|c| c.distance).collect();
    let outside: Vec<f64> = out.cells.iter().filter(|c| !c.inside).map(|c| c.distance).collect();
    if inside.len() < 2 || outside.len() < 2 {
        return Err(format!("{} cells inside, {} outside", inside.len(), outside.len()));
    }
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var / v.len() as f64)
    };
    let ((mi, si), (mo, so)) = (stats(&inside), stats(&outside));
    // one-sided Welch test at the 1% level; the degrees of freedom are in
    // the hundreds, so the normal quantile is used
    let t = (mo - mi) / (si + so).sqrt();
    ensure(
        mo > mi && t > 2.326,
        format!(
            "mean round-trip distance outside {mo:.4} ({} cells) vs inside {mi:.4} ({} cells), Welch t = {t:.1} vs 2.33",
            outside.len(),
            inside.len()
        ),
    )
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c9_determinism() -> Check {
    let mut cfg = ExperimentConfig::parse(
        "dataset = shape\n\
         regime = disjoint, joint\n\
         latent_dims = 2\n\
         bounds = hypercube, ellipsoid, hull, roundtrip\n\
         acquisitions = ei, pi, lcb, ts, random\n\
         seeds = 0, 1\n\
         budget = 4\n\
         n_init = 6\n\
         num_train = 200\n\
         vae_epochs = 3\n\
         gp_steps = 4\n\
         joint_steps = 2\n\
         num_inducing = 12\n\
         num_candidates = 128\n\
         ts_candidates = 64\n\
         grid_width = 8\n\
         grid_height = 6\n",
    )
    .map_err(|e| e.to_string())?;
    cfg.data.noise_sigma = 0.01;
    let dirs: Vec<tempfile::TempDir> = (0..4).map(|_| tempfile::tempdir().unwrap()).collect();
    experiment::run_sweep(&cfg, 1, Some(dirs[0].path())).map_err(|e| e.to_string())?;
    experiment::run_sweep(&cfg, 3, Some(dirs[1].path())).map_err(|e| e.to_string())?;
    experiment::diagnose(&cfg, 1, Some(dirs[2].path())).map_err(|e| e.to_string())?;
    experiment::diagnose(&cfg, 1, Some(dirs[3].path())).map_err(|e| e.to_string())?;
    let mut files = 0;
    let mut differ = Vec::new();
    for pair in [(0, 1), (2, 3)] {
        let (a, b) = (tree(dirs[pair.0].path()), tree(dirs[pair.1].path()));
        if a.len() != b.len() {
            return Err(format!("{} files vs {}", a.len(), b.len()));
        }
        for (x, y) in a.iter().zip(&b) {
            files += 1;
            if x != y {
                differ.push(x.0.clone());
            }
        }
    }
    ensure(
        differ.is_empty() && files > 100,
        format!("{files} files over 80 sweep runs and a diagnostic map, {} differ {:?}", differ.len(), differ),
    )
}
