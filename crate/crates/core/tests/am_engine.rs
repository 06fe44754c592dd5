use flowam::am::{
    generate, AmResources, BaselineRegConfig, FlowAmConfig, InitMode, Method, NoiseConfig, NoiseSite, Termination,
};
use flowam::data::{generate_synthetic, LabeledDataset, PointCloud, ShapeFamily, Split, SyntheticSpec};
use flowam::flow::{class_profiles, ClassProfile};
use flowam::metrics::chamfer;
use flowam::nn::{build_model, PointNet, Widths};
use flowam::Error;

struct Fixture {
    model: PointNet<f32>,
    data: LabeledDataset,
    profiles: ClassProfile,
}

fn fixture() -> Fixture {
    let spec = SyntheticSpec::new(ShapeFamily::DESK[..3].to_vec(), 5, 64, 3);
    let data = generate_synthetic(&spec).unwrap();
    let model = build_model(3, Widths::desk(), 9).unwrap();
    let profiles = class_profiles(&model, data.split(Split::Train), &data.classes, Split::Train).unwrap();
    Fixture { model, data, profiles }
}

impl Fixture {
    fn resources(&self) -> AmResources<'_> {
        AmResources {
            profiles: Some(&self.profiles),
            init_pool: Some(self.data.split(Split::Train)),
        }
    }

    fn config(&self, target: usize, iterations: usize) -> FlowAmConfig {
        let mut cfg = FlowAmConfig::new(target, Widths::desk());
        cfg.n_points = 64;
        cfg.max_iterations = iterations;
        cfg.seed = 21;
        cfg
    }
}

fn given(n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|i| {
            let t = i as f32 / n as f32 * std::f32::consts::TAU;
            [0.4 * t.cos(), 0.4 * t.sin(), 0.1 * (3.0 * t).sin()]
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

#[test]
fn zero_budget_returns_the_initialization() {
    let f = fixture();
    let mut cfg = f.config(1, 0);
    cfg.init = Some(InitMode::Given { cloud: given(64) });
    for m in Method::ALL {
        let r = generate(&f.model, m, &cfg, &BaselineRegConfig::default(), &f.resources()).unwrap();
        assert_eq!(r.cloud.points(), given(64).points(), "{m}");
        assert!(r.trace.is_empty());
        assert_eq!(r.trace.termination, Termination::BudgetExhausted);
    }
}

#[test]
fn runs_are_bit_reproducible() {
    let f = fixture();
    let cfg = f.config(2, 15);
    for m in Method::ALL {
        let a = generate(&f.model, m, &cfg, &BaselineRegConfig::default(), &f.resources()).unwrap();
        let b = generate(&f.model, m, &cfg, &BaselineRegConfig::default(), &f.resources()).unwrap();
        assert_eq!(a, b, "{m}");
        assert_eq!(a.trace.len(), 15);
        assert_eq!(a.cloud.len(), 64);
    }
}

#[test]
fn zero_amplitude_noise_is_a_no_op() {
    let f = fixture();
    let base = generate(&f.model, Method::Flow, &f.config(0, 10), &BaselineRegConfig::default(), &f.resources()).unwrap();
    for site in [NoiseSite::Init, NoiseSite::Latent, NoiseSite::Iteration] {
        let mut cfg = f.config(0, 10);
        cfg.noise = NoiseConfig { site, amplitude: 0.0 };
        let r = generate(&f.model, Method::Flow, &cfg, &BaselineRegConfig::default(), &f.resources()).unwrap();
        assert_eq!(r.cloud, base.cloud, "{site:?}");
        assert_eq!(r.trace, base.trace, "{site:?}");
    }
}

#[test]
fn init_noise_depends_on_the_seed() {
    let f = fixture();
    let run = |seed| {
        let mut cfg = f.config(0, 5);
        cfg.seed = seed;
        cfg.noise = NoiseConfig {
            site: NoiseSite::Init,
            amplitude: 0.3,
        };
        generate(&f.model, Method::Flow, &cfg, &BaselineRegConfig::default(), &f.resources())
            .unwrap()
            .cloud
    };
    assert!(chamfer(&run(1), &run(2)).unwrap() > 0.0);
}

#[test]
fn every_noise_site_perturbs_the_result() {
    let f = fixture();
    let base = generate(&f.model, Method::Flow, &f.config(0, 10), &BaselineRegConfig::default(), &f.resources()).unwrap();
    for site in [NoiseSite::Init, NoiseSite::Latent, NoiseSite::Iteration] {
        let mut cfg = f.config(0, 10);
        cfg.noise = NoiseConfig { site, amplitude: 0.5 };
        let r = generate(&f.model, Method::Flow, &cfg, &BaselineRegConfig::default(), &f.resources()).unwrap();
        assert_ne!(r.cloud, base.cloud, "{site:?}");
    }
}

#[test]
fn small_steps_raise_the_target_logit_monotonically() {
    let f = fixture();
    for c in 0..3 {
        let mut cfg = f.config(c, 10);
        cfg.learning_rate = 1e-5;
        cfg.init = Some(InitMode::Given { cloud: given(64) });
        let r = generate(&f.model, Method::Vanilla, &cfg, &BaselineRegConfig::default(), &f.resources()).unwrap();
        let logits: Vec<f64> = r.trace.entries.iter().map(|e| e.logit).collect();
        assert!(logits.windows(2).all(|w| w[1] > w[0]), "class {c}: {logits:?}");
        assert!(r.final_logit > logits[9]);
    }
}

#[test]
fn flow_needs_profiles() {
    let f = fixture();
    let res = AmResources {
        profiles: None,
        init_pool: Some(f.data.split(Split::Train)),
    };
    let e = generate(&f.model, Method::Flow, &f.config(0, 3), &BaselineRegConfig::default(), &res).unwrap_err();
    assert!(matches!(e, Error::Contract(_)), "{e}");
    // Baselines run without them.
    generate(&f.model, Method::Vanilla, &f.config(0, 3), &BaselineRegConfig::default(), &res).unwrap();
}

#[test]
fn extreme_betas_reduce_to_the_degenerate_objectives() {
    let f = fixture();
    for (beta, with_la, with_c) in [(0.0, true, false), (1.0, false, true)] {
        let mut cfg = f.config(1, 8);
        cfg.beta = beta;
        let r = generate(&f.model, Method::Flow, &cfg, &BaselineRegConfig::default(), &f.resources()).unwrap();
        for e in &r.trace.entries {
            let mut expect = e.l_am + e.l_lr;
            if with_la {
                expect += e.l_la;
            }
            if with_c {
                expect += e.l_c;
            }
            assert!((e.total - expect).abs() <= 1e-5 * (1.0 + expect.abs()), "beta {beta}: {e:?}");
        }
    }
}

#[test]
fn invalid_targets_and_settings_are_rejected() {
    let f = fixture();
    let e = generate(&f.model, Method::Vanilla, &f.config(7, 3), &BaselineRegConfig::default(), &f.resources()).unwrap_err();
    assert!(matches!(e, Error::Config(_)));
    let bad = BaselineRegConfig {
        theta_l2: 1.0,
        ..Default::default()
    };
    let e = generate(&f.model, Method::L2, &f.config(0, 3), &bad, &f.resources()).unwrap_err();
    assert!(matches!(e, Error::Config(_)));
}

#[test]
fn explanations_stay_the_size_of_their_initialization() {
    let f = fixture();
    let mut cfg = f.config(0, 4);
    cfg.init = Some(InitMode::Given { cloud: given(37) });
    let r = generate(&f.model, Method::GaussianBlur, &cfg, &BaselineRegConfig::default(), &f.resources()).unwrap();
    assert_eq!(r.cloud.len(), 37);
    let side = r.sidecar();
    assert_eq!(side["method"], "gaussian-blur");
    assert_eq!(side["model_fingerprint"], f.model.fingerprint());
}
