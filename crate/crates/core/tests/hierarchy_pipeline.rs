use proptest::prelude::*;
use wtmoments_core::hierarchy::DeviationField;
use wtmoments_core::kinetic::{EvolveControls, RateMode};
use wtmoments_core::moments::{
    capillary_gamma, deviations, eval_deviation_coefficients, evolve_hierarchy, exact_deviation_coefficients,
    exact_deviation_solution, init_hierarchy, GammaSource, InitialKind,
};
use wtmoments_core::ode::IntegratorControls;
use wtmoments_core::rates::RateField;
use wtmoments_core::spectrum::{zf_spectrum, Grid};
use wtmoments_core::system::PhysicalParams;

fn controls(t_end: f64) -> EvolveControls {
    EvolveControls {
        integrator: IntegratorControls {
            rtol: 1e-12,
            ..IntegratorControls::default()
        },
        checkpoints: vec![0.25 * t_end, 0.5 * t_end],
        theta_tol: 1e-10,
    }
}

#[test]
fn csv_round_trip_of_a_run() {
    let params = PhysicalParams::default();
    let spec = zf_spectrum(&params, Grid::geometric(1.0, 10.0, 3).unwrap()).unwrap();
    let gamma: Vec<f64> = spec.grid().nodes().iter().map(|&k| capillary_gamma(&params, k, GammaSource::Reference)).collect();
    let mode = RateMode::Frozen(RateField::stationary(&spec, gamma).unwrap());
    let h0 = init_hierarchy(&spec, 4, &InitialKind::Deterministic).unwrap();
    let sol = evolve_hierarchy(&params.system().unwrap(), &mode, &h0, 0.5, &controls(0.5)).unwrap();
    let last = sol.final_hierarchy();
    let mut buf = Vec::new();
    last.write_csv(&mut buf).unwrap();
    let back = wtmoments_core::hierarchy::MomentHierarchy::read_csv(&buf[..]).unwrap();
    assert_eq!(&back, last);
    let d = deviations(&back).unwrap();
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    assert_eq!(DeviationField::read_csv(&buf[..]).unwrap(), d);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn propagator_and_coefficients_agree(f0 in prop::collection::vec(-0.4f64..2.0, 1..9), theta in 0.0f64..4.0) {
        let a = exact_deviation_solution(&f0, theta).unwrap();
        let b = eval_deviation_coefficients(&exact_deviation_coefficients(&f0), theta);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn integrated_hierarchy_follows_exact_deviations(f0 in prop::collection::vec(-0.4f64..1.5, 3), scale in 0.5f64..2.0) {
        let params = PhysicalParams::default();
        let spec = zf_spectrum(&params, Grid::geometric(1.0, 3.0, 2).unwrap()).unwrap();
        let gamma: Vec<f64> = spec.grid().nodes().iter().map(|&k| capillary_gamma(&params, k, GammaSource::Reference)).collect();
        let t_end = scale / gamma[1];
        let mode = RateMode::Frozen(RateField::stationary(&spec, gamma).unwrap());
        let table = DeviationField::new(spec.grid().clone(), f0.iter().map(|v| vec![*v; 2]).collect()).unwrap();
        let h0 = init_hierarchy(&spec, 4, &InitialKind::Custom(table)).unwrap();
        let sol = evolve_hierarchy(&params.system().unwrap(), &mode, &h0, t_end, &controls(t_end)).unwrap();
        for i in 0..2 {
            for (theta, f) in sol.deviation_series(i) {
                let exact = exact_deviation_solution(&f0, theta).unwrap();
                for (x, y) in f.iter().zip(&exact) {
                    prop_assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0), "theta {theta}: {x} vs {y}");
                }
            }
        }
    }
}
