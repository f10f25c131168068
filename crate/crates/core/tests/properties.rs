use gpmean::estimation::DiscreteProblem;
use gpmean::mean_models::{BasisFunction, MeanModel, ParamBox};
use gpmean::sampling::{ObservationSampler, SeedSpec};
use gpmean::{gram, CellQuadrature, CovarianceKernel, TimeGrid};
use proptest::prelude::*;

fn sorted_grid() -> impl Strategy<Value = TimeGrid> {
    prop::collection::vec(0.01f64..1.0, 1..40).prop_map(|mut w| {
        let total: f64 = w.iter().sum();
        let mut t = vec![0.0];
        let mut acc = 0.0;
        for v in w.iter_mut() {
            acc += *v / total;
            t.push(acc);
        }
        *t.last_mut().unwrap() = 1.0;
        TimeGrid::new(t).unwrap()
    })
}

fn kernel() -> impl Strategy<Value = CovarianceKernel> {
    prop_oneof![
        Just(CovarianceKernel::wiener()),
        Just(CovarianceKernel::brownian_bridge()),
        (0.1f64..3.0, 0.5f64..2.0)
            .prop_map(|(e, s)| CovarianceKernel::ornstein_uhlenbeck(e, s).unwrap()),
        (0.1f64..0.95).prop_map(|h| CovarianceKernel::fractional_brownian(h).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_point_lies_in_its_cell(grid in sorted_grid(), s in 0.0f64..=1.0) {
        let i = grid.cell_index(s).unwrap();
        let (a, b) = grid.cell_bounds(i).unwrap();
        prop_assert!(s <= b);
        let inside = if i == 1 { s >= a } else { s > a };
        prop_assert!(inside);
    }

    #[test]
    fn gram_is_psd_up_to_roundoff(
        grid in sorted_grid(),
        k in kernel(),
        a in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let g = gram(&k, &grid);
        let m = g.matrix();
        let a = nalgebra::DVector::from_column_slice(&a[..grid.n()]);
        let quad = a.dot(&(m * &a));
        prop_assert!(quad >= -1e-10 * a.norm_squared() * m.amax());
    }

    #[test]
    fn estimate_dominates_truth(
        amp in 1.0f64..8.0,
        freq in -10.0f64..10.0,
        theta0 in -5.0f64..5.0,
        k in kernel(),
        n in 5usize..120,
        eps in 0.001f64..0.3,
        seed in any::<u64>(),
    ) {
        let model = MeanModel::from_basis(
            vec![BasisFunction::Sine { amp, freq, phase: 0.3 }],
            ParamBox::cube(1, -10.0, 10.0).unwrap(),
            (0.0, 1.0),
        ).unwrap();
        let q = CellQuadrature::new(8).unwrap();
        let grid = TimeGrid::uniform(n, 0.0, 1.0).unwrap();
        let sampler = ObservationSampler::new(&model, &[theta0], &k, &grid, &q, 8, 1e-12).unwrap();
        let obs = sampler.sample(eps, SeedSpec::new(seed, 0)).unwrap();
        let problem = DiscreteProblem::new(model, k, grid, q, 8).unwrap();
        let ctx = problem.context(&obs).unwrap();
        let est = ctx.estimate().unwrap();
        prop_assert!(est.theta_hat[0].abs() <= 10.0);
        let phi0 = ctx.contrast(&[theta0]).unwrap();
        prop_assert!(est.phi >= phi0 - 1e-12 * phi0.abs().max(1.0), "{} < {}", est.phi, phi0);
    }
}
