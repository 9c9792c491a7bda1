//! Cross-checks between the simulator, the stationarity residual and the PDE.

use gfrag::lyapunov::TestFunction;
use gfrag::pde::{steady_state, DensityField, SizeGrid, SteadyOptions};
use gfrag::pdmp::{histogram_l1, EmpiricalDistribution, Simulator, StationaryConfig};
use gfrag::rates::{FragmentationKernel, RateFn, RateModel};
use gfrag::tails::stationarity_residual;

fn tcp() -> RateModel {
    RateModel::new(RateFn::constant(1.0).unwrap(), RateFn::power(1.0, 1.0).unwrap())
}

fn half() -> FragmentationKernel {
    FragmentationKernel::point_mass(0.5).unwrap()
}

fn sample(m: RateModel, k: FragmentationKernel, horizon: f64, seed: u64) -> EmpiricalDistribution {
    let cfg = StationaryConfig {
        n_chains: Some(1),
        ..StationaryConfig::new(horizon)
    };
    Simulator::new(m, k).unwrap().sample_stationary(&cfg, seed).unwrap()
}

#[test]
fn independent_seeds_agree() {
    let a = sample(tcp(), half(), 1e6, 1);
    let b = sample(tcp(), half(), 1e6, 2);
    assert!(a.len() >= 1_000_000 && b.len() >= 1_000_000);
    let l1 = histogram_l1(&a, &b, 100);
    assert!(l1 < 0.03, "{l1}");
}

#[test]
fn stationarity_residual_shrinks_with_samples() {
    let f = [TestFunction::Power { p: 1.0 }];
    let shrinks = (0..5u64)
        .filter(|&seed| {
            let r = |horizon| {
                let d = sample(tcp(), half(), horizon, 100 + seed);
                stationarity_residual(&tcp(), &half(), &d, &f, seed)[0].mean.unwrap().abs()
            };
            r(1e6) < r(1e4)
        })
        .count();
    assert!(shrinks >= 3, "{shrinks} of 5");
}

#[test]
fn tcp_steady_state_second_moment() {
    let grid = SizeGrid::for_kernel(&half(), 1e-3, 30.0, 2000).unwrap();
    let st = steady_state(&tcp(), &half(), DensityField::log_normal(grid, 1.0, 0.5), &SteadyOptions::default()).unwrap();
    assert!(st.converged);
    let m2 = st.field.integrate(|x| x * x);
    assert!((m2 - 2.0).abs() < 0.03, "{m2}");
}

#[test]
fn unit_rates_mean_log_matches_pde() {
    let m = RateModel::new(RateFn::constant(1.0).unwrap(), RateFn::constant(1.0).unwrap());
    let k = FragmentationKernel::Uniform;
    let grid = SizeGrid::new(1e-4, 40.0, 400).unwrap();
    let st = steady_state(&m, &k, DensityField::log_normal(grid, 1.0, 0.5), &SteadyOptions::default()).unwrap();
    let pde = st.field.integrate(f64::ln) / st.field.mass();
    let d = sample(m, k, 1e6, 7);
    let mc = d.expect(f64::ln);
    assert!((pde - mc).abs() < 0.02, "pde {pde} vs mc {mc}");
}
