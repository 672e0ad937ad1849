use flocking::config::{
    load_config, parse_config, save_config, Amplitude, Diagnostics, FamilyName, KernelSpec, NonFlockScale, RadiusSpec,
    SimConfig, SweepSpec, VelocitySpec,
};
use flocking::dynamics::DriftMode;
use flocking::Error;
use proptest::prelude::*;

fn velocity() -> impl Strategy<Value = VelocitySpec> {
    prop_oneof![
        (0.001f64..100.0).prop_map(|v_prime| VelocitySpec::Halfsplit { v_prime }),
        (1e-6f64..1.0).prop_map(|v| VelocitySpec::NearestOrigin { v0: Some(v), scale: None }),
        prop_oneof![Just(NonFlockScale::Bounded), Just(NonFlockScale::Vanishing)]
            .prop_map(|s| VelocitySpec::NearestOrigin { v0: None, scale: Some(s) }),
        (1e-6f64..1.0).prop_map(|v0| VelocitySpec::IsolatedCluster { v0 }),
        (1e-6f64..1.0).prop_map(|v_max| VelocitySpec::Random { v_max }),
    ]
}

fn kernel() -> impl Strategy<Value = KernelSpec> {
    (0..4usize, prop::option::of(1e-4f64..1.0), 0.0f64..1.0, 0.1f64..4.0).prop_map(|(f, amp, delta, gamma)| {
        let amplitude = amp.map_or(Amplitude::default(), Amplitude::Value);
        let mut k = KernelSpec { family: FamilyName::Indicator, amplitude, gamma: None, samples: None, delta };
        match f {
            0 => {}
            1 => k.family = FamilyName::Triangular,
            2 => {
                k.family = FamilyName::PowerCap;
                k.gamma = Some(gamma);
            }
            _ => {
                k.family = FamilyName::Tabulated;
                k.samples = Some(vec![1.0, 0.75, gamma / 8.0, 0.0]);
            }
        }
        k
    })
}

fn config() -> impl Strategy<Value = SimConfig> {
    (
        (2..5000usize, 2..4usize, 0..i64::MAX as u64, 1..100usize, 1..20_000usize),
        prop_oneof![
            (0.1f64..5.0).prop_map(RadiusSpec::alpha),
            (0.001f64..0.5).prop_map(RadiusSpec::explicit),
            (0.1f64..2.0).prop_map(|b| RadiusSpec { beta: Some(b), ..Default::default() }),
        ],
        kernel(),
        velocity(),
        (any::<bool>(), 0..3usize, 0..50usize),
        prop::option::of((1..5usize, 1..5usize, 1..60usize)),
    )
        .prop_map(|((n, d, seed, trials, t_max), radius, kernel, velocity, (spectral, drift, cert), sweep)| {
            let mut c = SimConfig::minimal(n, d, 1.0, 1.0);
            c.seed = seed;
            c.trials = trials;
            c.t_max = t_max;
            c.radius = radius;
            c.kernel = kernel;
            c.velocity = velocity;
            c.diagnostics = Diagnostics {
                spectral,
                drift: [DriftMode::Exact, DriftMode::Bound, DriftMode::Off][drift],
                certificate_interval: cert,
            };
            c.sweep = sweep.map(|(a, v, trials)| SweepSpec {
                alphas: (0..a).map(|k| 0.5 + 0.3 * k as f64).collect(),
                v_primes: (0..v).map(|k| 0.01 * 7f64.powi(k as i32)).collect(),
                trials,
            });
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn toml_round_trip_is_lossless(c in config()) {
        let text = c.to_toml().unwrap();
        prop_assert_eq!(parse_config(&text).unwrap(), c.clone());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        save_config(&c, &path).unwrap();
        prop_assert_eq!(load_config(&path).unwrap(), c);
    }
}

#[test]
fn load_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "n = 100\nd = 2\n\n[radius]\nalpha = 2.0\n\n[kernel]\nfamily = \"triangular\"\nwidth = 3\n\n[velocity]\nmode = \"halfsplit\"\nv_prime = 1.0\n",
    )
    .unwrap();
    let err = load_config(&path).unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err:?}");
    let msg = err.to_string();
    assert!(msg.contains("bad.toml"), "{msg}");
    assert!(msg.contains("line 9"), "{msg}");
    assert!(msg.contains("width"), "{msg}");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_config("/nonexistent/run.toml").unwrap_err();
    assert!(matches!(err, Error::Io(_)), "{err:?}");
}

#[test]
fn semantic_error_points_at_key() {
    let text = "n = 100\nd = 2\n\n[radius]\nalpha = -1.0\n\n[kernel]\nfamily = \"triangular\"\n\n[velocity]\nmode = \"halfsplit\"\nv_prime = 1.0\n";
    let err = parse_config(text).unwrap_err().to_string();
    assert!(err.contains("radius.alpha"), "{err}");
    assert!(err.contains("line 5"), "{err}");
}
