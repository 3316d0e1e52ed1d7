mod common;

use common::{rng, GenOptions, Instance, ProsumerSpec};
use gridshare::prosumer::Prosumer;
use proptest::prelude::*;
use rand::Rng;

fn population(seed: u64, envelopes: bool) -> (Vec<ProsumerSpec>, Vec<Prosumer>) {
    let inst = Instance::random(
        seed,
        GenOptions {
            max_prosumers: 5,
            max_devices: 4,
            envelopes,
            ..GenOptions::default()
        },
    );
    (inst.prosumers.clone(), inst.prosumers())
}

fn surplus(p: &Prosumer, d: &[f64], price: f64) -> f64 {
    p.surplus(d, price * p.net_consumption(d)).unwrap()
}

proptest! {
    #[test]
    fn best_response_beats_random_feasible_points(seed in any::<u64>(), price in -2.0f64..12.0) {
        let (specs, ps) = population(seed, false);
        let mut r = rng(seed ^ 0x5eed);
        for (spec, p) in specs.iter().zip(&ps) {
            let best = p.best_response(price);
            let top = surplus(p, &best.d, price);
            for _ in 0..1000 {
                let d: Vec<f64> = spec.devices.iter().map(|dv| r.gen_range(dv.d_lo..=dv.d_hi)).collect();
                prop_assert!(top >= surplus(p, &d, price) - 1e-9);
            }
        }
    }

    #[test]
    fn demand_falls_with_price(seed in any::<u64>(), a in -2.0f64..12.0, b in -2.0f64..12.0, env in any::<bool>()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (_, ps) = population(seed, env);
        for p in &ps {
            let cheap: f64 = p.respond(lo).unwrap().d.iter().sum();
            let dear: f64 = p.respond(hi).unwrap().d.iter().sum();
            prop_assert!(cheap >= dear - 1e-12);
        }
    }

    #[test]
    fn responses_respect_device_limits(seed in any::<u64>(), price in -20.0f64..40.0, env in any::<bool>()) {
        let (specs, ps) = population(seed, env);
        for (spec, p) in specs.iter().zip(&ps) {
            let bundle = p.respond(price).unwrap();
            for (d, dv) in bundle.d.iter().zip(&spec.devices) {
                prop_assert!(*d >= dv.d_lo && *d <= dv.d_hi);
            }
            prop_assert!((bundle.z - (bundle.d.iter().sum::<f64>() - spec.g)).abs() <= 1e-12);
        }
    }

    #[test]
    fn envelope_clip_is_consistent(seed in any::<u64>(), price in -2.0f64..12.0) {
        let (specs, ps) = population(seed, true);
        for (spec, p) in specs.iter().zip(&ps) {
            let (z_lo, z_hi) = spec.envelope.unwrap();
            let free = p.best_response(price);
            let clipped = p.best_response_enveloped(price).unwrap();
            prop_assert!(clipped.z >= z_lo - 1e-9 && clipped.z <= z_hi + 1e-9);
            if free.z >= z_lo && free.z <= z_hi {
                prop_assert_eq!(&clipped.d, &free.d);
            }
        }
    }

    #[test]
    fn interior_devices_equate_marginal_utility(seed in any::<u64>(), price in -2.0f64..12.0, env in any::<bool>()) {
        let (specs, ps) = population(seed, env);
        for (spec, p) in specs.iter().zip(&ps) {
            let bundle = p.respond(price).unwrap();
            let level = if bundle.pinned.is_some() { bundle.shadow_price } else { price };
            for (d, dv) in bundle.d.iter().zip(&spec.devices) {
                if *d > dv.d_lo + 1e-9 && *d < dv.d_hi - 1e-9 {
                    prop_assert!((dv.alpha - dv.beta * d - level).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn enveloped_response_is_optimal_within_envelope(seed in any::<u64>(), price in -2.0f64..12.0) {
        let (specs, ps) = population(seed, true);
        let mut r = rng(seed ^ 0xe1);
        for (spec, p) in specs.iter().zip(&ps) {
            let (z_lo, z_hi) = spec.envelope.unwrap();
            let best = p.best_response_enveloped(price).unwrap();
            let top = surplus(p, &best.d, price);
            for _ in 0..1000 {
                let d: Vec<f64> = spec.devices.iter().map(|dv| r.gen_range(dv.d_lo..=dv.d_hi)).collect();
                let z = p.net_consumption(&d);
                if z >= z_lo && z <= z_hi {
                    prop_assert!(top >= surplus(p, &d, price) - 1e-9);
                }
            }
        }
    }
}
