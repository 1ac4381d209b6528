//! Property checks shared by the property suite and the acceptance report.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use railtrace_core::scenario::{generate_scenario, Scenario, Vec2};
use railtrace_core::simulator::simulate;
use railtrace_core::trace::{bin_magnitude, compass16, sample_events, Sign};

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

/// Larger |delta| never gets a smaller label; scaling both delta and the
/// average by a power of two changes nothing; the sign follows delta.
pub fn bins(cases: u32) -> Result<(), String> {
    run(
        cases,
        (-1e3f64..1e3, 0.0f64..1e3, 1e-6f64..1e3, -20i32..20),
        |(delta, extra, avg, exp)| {
            let a = bin_magnitude(delta, avg);
            let bigger = delta.signum() * (delta.abs() + extra);
            prop_assert!(bin_magnitude(bigger, avg).label >= a.label);
            let c = 2f64.powi(exp);
            prop_assert_eq!(bin_magnitude(delta * c, avg * c), a);
            let expected = if delta > 0.0 {
                Sign::Positive
            } else if delta < 0.0 {
                Sign::Negative
            } else {
                Sign::None
            };
            prop_assert_eq!(a.sign, expected);
            Ok(())
        },
    )
}

/// Rotating a vector by k sixteenths of a turn moves its sector by k.
pub fn compass_rotation(cases: u32) -> Result<(), String> {
    run(
        cases,
        (0usize..16, 0.05f64..0.95, 0usize..16, 1e-4f64..10.0),
        |(sector, frac, k, len)| {
            let step = 22.5f64;
            let deg = sector as f64 * step - step / 2.0 + frac * step;
            let v = |d: f64| {
                let r = d.to_radians();
                Vec2::new(len * r.cos(), len * r.sin())
            };
            let base = compass16(v(deg)).unwrap();
            prop_assert_eq!(base.index(), sector);
            let turned = compass16(v(deg + k as f64 * step)).unwrap();
            prop_assert_eq!(turned.index(), (sector + k) % 16);
            Ok(())
        },
    )
}

pub fn scenario_strategy() -> impl Strategy<Value = Scenario> {
    (any::<u64>(), 0usize..=30, 2usize..=20)
        .prop_map(|(seed, n_obs, n_ctrl)| generate_scenario(seed, n_obs, n_ctrl).unwrap())
}

pub fn codec_round_trip(cases: u32) -> Result<(), String> {
    run(cases, scenario_strategy(), |s| {
        let bytes = s.encode();
        let back = Scenario::decode(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.encode(), bytes);
        Ok(())
    })
}

/// Every obstacle entered along a simulated track is exited as often.
pub fn influence_balance(cases: u32) -> Result<(), String> {
    run(
        cases,
        (any::<u64>(), 5usize..=25, 4usize..=16, 1usize..=20),
        |(seed, n_obs, n_ctrl, rate)| {
            let s = generate_scenario(seed, n_obs, n_ctrl).unwrap();
            let Ok(result) = simulate(&s.ctrl_points, &s) else {
                return Ok(());
            };
            let sample = sample_events(&result, rate).unwrap();
            for o in &s.obstacles {
                let of = |entered| {
                    sample
                        .influences
                        .iter()
                        .filter(|e| e.nickname == o.nickname && e.entered == entered)
                        .count()
                };
                prop_assert_eq!(of(true), of(false), "{}", o.nickname);
            }
            let mut open = 0i64;
            for e in &sample.influences {
                open += if e.entered { 1 } else { -1 };
                prop_assert!(open >= 0);
            }
            Ok(())
        },
    )
}
