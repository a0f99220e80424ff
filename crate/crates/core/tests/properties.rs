use proptest::prelude::*;

use qvcore::generators::{JumpSpec, PathRecipe, RecipeKind};
use qvcore::qv::{discrete_qv, discrete_scalar_qv};
use qvcore::smooth::PathFunctional;
use qvcore::transform::{follmer_integral, Integrand};
use qvcore::{BilinearForm, CadlagPath, NormChoice, Partition, SmoothFunction};

fn path_strategy() -> impl Strategy<Value = CadlagPath> {
    (any::<u64>(), 1usize..4, 4u32..9, prop::collection::vec((0.01f64..1.0, -2.0f64..2.0), 0..4), 0usize..3).prop_map(
        |(seed, d, level, raw_jumps, kind)| {
            let jumps: Vec<JumpSpec> =
                raw_jumps.iter().map(|&(t, v)| JumpSpec { time: t, delta: vec![v; d] }).collect();
            let sigma: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.3 }).collect()).collect();
            let kind = match kind {
                0 => RecipeKind::ScaledRandomWalk { level, sigma },
                1 => RecipeKind::JumpDiffusion { level, sigma, jumps },
                _ => RecipeKind::Fbm { hurst: 0.35, level, dim: d },
            };
            PathRecipe::new(kind, seed, 1.0).generate().unwrap()
        },
    )
}

fn partition_strategy() -> impl Strategy<Value = Partition> {
    prop::collection::vec(0.0f64..1.0, 0..60).prop_map(|mut pts| {
        pts.retain(|&t| t > 0.0);
        pts.push(0.0);
        pts.push(1.0);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        Partition::from_points(pts).unwrap()
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_qv_is_symmetric_and_traces_to_scalar(x in path_strategy(), pi in partition_strategy(), t in 0.0f64..1.0) {
        let d = x.dim();
        let q = discrete_qv(&BilinearForm::outer(d), &x, &x, &pi, t).unwrap();
        for i in 0..d {
            for j in 0..d {
                prop_assert_eq!(q[i * d + j], q[j * d + i]);
            }
        }
        let trace: f64 = (0..d).map(|i| q[i * d + i]).sum();
        let scalar = discrete_scalar_qv(&x, &pi, t, NormChoice::Euclidean).unwrap();
        prop_assert!(close(trace, scalar, 1e-12));
    }

    #[test]
    fn polarization(x in path_strategy(), seed in any::<u64>(), pi in partition_strategy()) {
        let d = x.dim();
        let kind = RecipeKind::ScaledRandomWalk { level: 7, sigma: vec![vec![0.5]; d] };
        let y = PathRecipe::new(kind, seed, 1.0).generate().unwrap();
        let b = BilinearForm::inner(d);
        let xy = discrete_qv(&b, &x, &y, &pi, 1.0).unwrap()[0];
        let sum = x.combine(1.0, &y, 1.0).unwrap();
        let diff = x.combine(1.0, &y, -1.0).unwrap();
        let p = discrete_qv(&b, &sum, &sum, &pi, 1.0).unwrap()[0];
        let m = discrete_qv(&b, &diff, &diff, &pi, 1.0).unwrap()[0];
        prop_assert!(close(xy, 0.25 * (p - m), 1e-11), "{} vs {}", xy, 0.25 * (p - m));
    }

    #[test]
    fn generation_is_deterministic(seed in any::<u64>(), level in 2u32..10) {
        let kind = RecipeKind::JumpDiffusion {
            level,
            sigma: vec![vec![1.0, 0.5]],
            jumps: vec![JumpSpec { time: 0.5, delta: vec![1.0] }],
        };
        let recipe = PathRecipe::new(kind, seed, 2.0);
        prop_assert_eq!(recipe.generate().unwrap(), recipe.generate().unwrap());
    }

    #[test]
    fn discrete_integration_by_parts(x in path_strategy(), pi in partition_strategy(), t in 0.0f64..1.0) {
        // sum 2 X_r dX = X_t^2 - X_0^2 - sum dX^2, one coordinate
        let first = x.map_linear(&{
            let mut m = vec![0.0; x.dim()];
            m[0] = 1.0;
            m
        }, 1).unwrap();
        let fp = PathFunctional::time_independent(SmoothFunction::norm_sq(1).unwrap()).unwrap();
        let lhs = follmer_integral(Integrand::Gradient(&fp), &first, &pi, t).unwrap()[0];
        let (xt, x0) = (first.evaluate(t).unwrap()[0], first.evaluate(0.0).unwrap()[0]);
        let q = discrete_scalar_qv(&first, &pi, t, NormChoice::Euclidean).unwrap();
        prop_assert!(close(lhs, xt * xt - x0 * x0 - q, 1e-12));
    }
}
