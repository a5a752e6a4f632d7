use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rankpool_core::argmin_grad::{grad_wrt_scalar_param, grad_wrt_w, vjp_inputs, ActiveSet, FactorMode, WGradMode};
use rankpool_core::oracle::{fd_derivative_vec, fd_gradient};
use rankpool_core::pooling::rank_pool_frames;
use rankpool_core::training::{
    end_to_end_sample, AffineUpstream, EndToEndConfig, LinearClassifier, LossKind, UpstreamMap,
};
use rankpool_core::{MapKind, SvrConfig};

const H: f64 = 1e-5;

fn tight(eps: f64) -> SvrConfig {
    SvrConfig::default().with_epsilon(eps).with_tol(1e-11)
}

fn randn(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// Frames drifting along a random direction, so the rank-pool fit is
/// non-trivial.
fn trending(rng: &mut ChaCha8Rng, j: usize, d: usize) -> Vec<DVector<f64>> {
    let dir = randn(rng, d).normalize();
    (1..=j).map(|t| &dir * (0.3 * t as f64) + randn(rng, d) * 0.5).collect()
}

fn solve(frames: &[DVector<f64>], svr: &SvrConfig) -> DVector<f64> {
    rank_pool_frames(frames, svr).unwrap().u().clone()
}

fn active(frames: &[DVector<f64>], svr: &SvrConfig) -> Vec<bool> {
    ActiveSet::at(frames, &solve(frames, svr), svr.epsilon).active
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

fn shifted(frames: &[DVector<f64>], dirs: &[DVector<f64>], theta: f64) -> Vec<DVector<f64>> {
    frames.iter().zip(dirs).map(|(v, d)| v + d * theta).collect()
}

#[test]
fn scalar_parameter_derivative_matches_resolve() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0;
    for trial in 0..12 {
        let eps = if trial % 2 == 0 { 0.0 } else { 0.1 };
        let svr = tight(eps);
        let frames = trending(&mut rng, 10, 4);
        let dirs: Vec<DVector<f64>> = (0..10).map(|_| randn(&mut rng, 4)).collect();
        let base = active(&frames, &svr);
        if [-H, H]
            .iter()
            .any(|&t| active(&shifted(&frames, &dirs, t), &svr) != base)
        {
            continue;
        }
        let u = solve(&frames, &svr);
        let analytic = grad_wrt_scalar_param(&frames, &u, &dirs, &svr, FactorMode::Auto).unwrap();
        let fd = fd_derivative_vec(|t| solve(&shifted(&frames, &dirs, t), &svr).as_slice().to_vec(), 0.0, H);
        let e = rel(analytic.as_slice(), &fd);
        assert!(e < 1e-4, "trial {trial}: {e:e}");
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn frame_scale_derivative_matches_resolve() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let svr = tight(0.0);
    let frames = trending(&mut rng, 12, 3);
    let u = solve(&frames, &svr);
    let analytic = grad_wrt_scalar_param(&frames, &u, &frames, &svr, FactorMode::Dense).unwrap();
    let scaled = |c: f64| {
        let v: Vec<DVector<f64>> = frames.iter().map(|f| f * c).collect();
        solve(&v, &svr).as_slice().to_vec()
    };
    let fd = fd_derivative_vec(scaled, 1.0, H);
    assert!(rel(analytic.as_slice(), &fd) < 1e-4);
}

#[test]
fn input_vjp_matches_resolve() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for mode in [FactorMode::Dense, FactorMode::ShermanMorrison] {
        let svr = tight(0.0);
        let frames = trending(&mut rng, 8, 3);
        let g = randn(&mut rng, 3);
        let u = solve(&frames, &svr);
        let analytic: Vec<f64> = vjp_inputs(&frames, &u, &g, &svr, mode)
            .unwrap()
            .iter()
            .flat_map(|v| v.iter().copied().collect::<Vec<_>>())
            .collect();
        let flat: Vec<f64> = frames
            .iter()
            .flat_map(|v| v.iter().copied().collect::<Vec<_>>())
            .collect();
        let fd = fd_gradient(
            |x| {
                let v: Vec<DVector<f64>> = x.chunks(3).map(DVector::from_column_slice).collect();
                g.dot(&solve(&v, &svr))
            },
            &flat,
            H,
        );
        let e = rel(&analytic, &fd);
        assert!(e < 1e-4, "{mode:?}: {e:e}");
    }
}

#[test]
fn w_gradient_matches_resolve() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let cases = [
        (MapKind::Identity, DMatrix::identity(3, 3)),
        (
            MapKind::Identity,
            DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal)),
        ),
        (
            MapKind::Ssr,
            DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal)),
        ),
        (
            MapKind::Ser,
            DMatrix::from_fn(2, 3, |_, _| rng.sample::<f64, _>(StandardNormal)),
        ),
    ];
    let svr = tight(0.0);
    for (map, w) in cases {
        let inputs = trending(&mut rng, 9, 3);
        let out_dim = map.output_dim(w.nrows());
        let g = randn(&mut rng, out_dim);
        let encode = |w: &DMatrix<f64>| {
            let v: Vec<DVector<f64>> = inputs.iter().map(|x| map.apply(&(w * x))).collect();
            solve(&v, &svr)
        };
        let u = encode(&w);
        let analytic = grad_wrt_w(&inputs, &w, map, &u, &g, &svr, WGradMode::Full).unwrap();
        let fd = fd_gradient(
            |p| g.dot(&encode(&DMatrix::from_column_slice(w.nrows(), w.ncols(), p))),
            w.as_slice(),
            H,
        );
        let e = rel(analytic.as_slice(), &fd);
        assert!(e < 1e-4, "{map}: {e:e}");
    }
}

#[test]
fn zero_inputs_give_zero_w_gradient() {
    let svr = tight(0.1);
    let inputs = vec![DVector::zeros(3); 6];
    let w = DMatrix::identity(3, 3);
    let u = solve(&inputs, &svr);
    let g = DVector::from_element(3, 1.0);
    let grad = grad_wrt_w(&inputs, &w, MapKind::Identity, &u, &g, &svr, WGradMode::Full).unwrap();
    assert_eq!(grad.norm(), 0.0);
}

#[test]
fn pipeline_gradient_matches_resolve() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let (j, d, k) = (6, 3, 3);
    let frames = trending(&mut rng, j, d);
    let a = DMatrix::from_fn(
        d,
        d,
        |r, c| if r == c { 1.0 } else { 0.0 } + 0.2 * rng.sample::<f64, _>(StandardNormal),
    );
    let b = randn(&mut rng, d) * 0.1;
    let up = AffineUpstream::new(&a, &b, MapKind::Identity).unwrap();
    let clf = LinearClassifier {
        weights: DMatrix::from_fn(k, d, |_, _| rng.sample(StandardNormal)),
        bias: randn(&mut rng, k),
    };
    let cfg = EndToEndConfig {
        svr: tight(0.0),
        ..EndToEndConfig::default()
    };
    for loss in [LossKind::CrossEntropy, LossKind::Hinge] {
        let cfg = EndToEndConfig { loss, ..cfg.clone() };
        let sg = end_to_end_sample(&up, &clf, &frames, 1, &cfg).unwrap();
        let fd = fd_gradient(
            |p| {
                let up = AffineUpstream::from_params(d, d, p.to_vec(), MapKind::Identity).unwrap();
                end_to_end_sample(&up, &clf, &frames, 1, &cfg).unwrap().loss.loss
            },
            up.params(),
            H,
        );
        let e = rel(&sg.upstream.unwrap(), &fd);
        assert!(e < 1e-3, "{loss}: {e:e}");
    }
}

#[test]
fn diagonal_mode_is_exact_in_one_dimension_and_approximate_above() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let svr = tight(0.1);
    let g = DVector::from_element(1, 0.7);
    let inputs = trending(&mut rng, 15, 1);
    let w = DMatrix::from_element(1, 1, 1.3);
    let v: Vec<DVector<f64>> = inputs.iter().map(|x| &w * x).collect();
    let u = solve(&v, &svr);
    let full = grad_wrt_w(&inputs, &w, MapKind::Identity, &u, &g, &svr, WGradMode::Full).unwrap();
    let diag = grad_wrt_w(&inputs, &w, MapKind::Identity, &u, &g, &svr, WGradMode::Diagonal).unwrap();
    assert!((full[(0, 0)] - diag[(0, 0)]).abs() <= 1e-10);

    let inputs = trending(&mut rng, 15, 4);
    let w = DMatrix::identity(4, 4);
    let g = randn(&mut rng, 4);
    let u = solve(&inputs, &svr);
    let full = grad_wrt_w(&inputs, &w, MapKind::Identity, &u, &g, &svr, WGradMode::Full).unwrap();
    let diag = grad_wrt_w(&inputs, &w, MapKind::Identity, &u, &g, &svr, WGradMode::Diagonal).unwrap();
    assert!((&full - &diag).norm() > 1e-8);
}
