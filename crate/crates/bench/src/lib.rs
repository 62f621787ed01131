//! Shared fixtures for the benchmark targets.

use cdrlens_core::synth::{generate_city, CityConfig, SyntheticCity};

/// A mid-sized deterministic city reused across benches.
pub fn bench_city() -> SyntheticCity {
    let config = CityConfig {
        towers: 400,
        num_users: 200,
        days: 14,
        seed: 1234,
        ..CityConfig::default()
    };
    generate_city(&config).expect("bench city generates")
}
