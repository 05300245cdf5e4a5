use super::*;
use crate::model::Combination;

fn small_cfg() -> FockConfig {
    FockConfig::new(14, 30, 1e-6).unwrap()
}

fn grid() -> IntensityGrid {
    IntensityGrid::linspace(0.2, 0.6, 5).unwrap()
}

fn curve(kind: ObservableKind, x: &[f64], y: &[f64]) -> ObservableCurve {
    ObservableCurve::new(kind, x.to_vec(), y.to_vec(), None).unwrap()
}

#[test]
fn kind_names_roundtrip() {
    for k in ObservableKind::ALL {
        assert_eq!(k.name().parse::<ObservableKind>().unwrap(), k);
    }
    assert!("g2".parse::<ObservableKind>().is_err());
}

#[test]
fn forward_produces_five_curves_on_grid() {
    let p = ModelParams::table_s1(Combination::H12Given11);
    let r = forward(&p, &grid(), &DetectorSetup::default(), &small_cfg()).unwrap();
    assert_eq!(r.points.len(), 5);
    let curves = r.curves();
    assert_eq!(curves.len(), 5);
    for c in &curves {
        assert_eq!(c.x.len(), 5);
        assert!(c.x.windows(2).all(|w| w[1] > w[0]), "{} x not increasing", c.kind);
    }
    for pt in &r.points {
        assert!(pt.value(ObservableKind::HeraldedG2) < 1.0);
        assert!(pt.mean_signal > 0.0 && pt.mean_herald > 0.0);
    }
}

#[test]
fn forward_matches_dense_state_pipeline() {
    let p = ModelParams::table_s1(Combination::H11Given13);
    let cfg = small_cfg();
    let setup = DetectorSetup::default();
    let r = forward(&p, &IntensityGrid::new(vec![0.4]).unwrap(), &setup, &cfg).unwrap();
    let rho = crate::model::build_state(&p, 0.4, &cfg).unwrap();
    let rec = crate::detect::simulate_record(&rho, &setup).unwrap();
    let pt = &r.points[0];
    for (a, b) in [(pt.record.r0, rec.r0), (pt.record.r1a, rec.r1a), (pt.record.r2, rec.r2), (pt.record.rc, rec.rc)] {
        assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{a} vs {b}");
    }
    let ns = crate::model::mean_photons(&rho, SIGNAL).unwrap();
    assert!((pt.mean_signal - ns).abs() < 1e-10);
}

#[test]
fn dark_state_values() {
    let r = forward(&ModelParams::dark(), &grid(), &DetectorSetup::default(), &small_cfg()).unwrap();
    let pt = &r.points[0];
    assert!(pt.value(ObservableKind::HeraldedG2).is_nan());
    assert!(pt.value(ObservableKind::QngDepth).is_nan());
    for k in [ObservableKind::NcWitnessSignal, ObservableKind::NcWitnessHerald, ObservableKind::NcWitnessCross] {
        assert_eq!(pt.value(k), 0.0, "{k}");
    }
}

#[test]
fn extras_are_filled_on_request() {
    let p = ModelParams::table_s1(Combination::H12Given11);
    let r = forward_with(&p, &grid(), &DetectorSetup::default(), &small_cfg(), true).unwrap();
    let e = r.points[2].extras.unwrap();
    assert!(e.log_negativity > 0.0);
    assert!(e.g2_form_a.is_finite() && e.g2_form_b.is_finite());
    assert!(e.delta_w_heralded.is_finite());
}

#[test]
fn loss_zero_on_identical_curves() {
    let c = curve(ObservableKind::HeraldedG2, &[0.1, 0.2, 0.3], &[0.2, 0.5, 0.9]);
    let l = loss(std::slice::from_ref(&c), std::slice::from_ref(&c), &LossConfig::default()).unwrap();
    assert!(l.total.abs() < 1e-15);
}

#[test]
fn loss_hand_computed() {
    let data = curve(ObservableKind::HeraldedG2, &[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]);
    // Model is data + 0.2 on the middle point, interpolated linearly.
    let model = curve(ObservableKind::HeraldedG2, &[0.0, 1.0, 2.0], &[0.0, 1.2, 2.0]);
    let l = loss(&[model], &[data], &LossConfig::default()).unwrap();
    let expected = (0.04f64 / 7.0).sqrt() / 2.0;
    assert!((l.total - expected).abs() < 1e-12, "{}", l.total);
}

#[test]
fn loss_interpolates_and_extrapolates_flat() {
    let data = curve(ObservableKind::QngDepth, &[-1.0, 0.5, 3.0], &[1.0, 2.0, 3.0]);
    let model = curve(ObservableKind::QngDepth, &[0.0, 1.0], &[1.0, 3.0]);
    let l = loss(&[model], &[data], &LossConfig::default()).unwrap();
    // Predictions 1, 2, 3 match exactly.
    assert!(l.total.abs() < 1e-15);
}

#[test]
fn loss_penalizes_excess_range() {
    let data = curve(ObservableKind::HeraldedG2, &[0.0, 1.0], &[0.0, 1.0]);
    let mild = curve(ObservableKind::HeraldedG2, &[0.0, 1.0], &[0.0, 2.0]);
    let wild = curve(ObservableKind::HeraldedG2, &[0.0, 1.0], &[0.0, 5.0]);
    let cfg = LossConfig::default();
    let a = loss(&[mild], std::slice::from_ref(&data), &cfg).unwrap().total;
    let b = loss(&[wild], &[data], &cfg).unwrap().total;
    assert!((a - (0.5f64).sqrt()).abs() < 1e-12);
    assert!((b - ((8.0f64).sqrt() + 9.0)).abs() < 1e-12);
}

#[test]
fn loss_weights_and_missing_kinds() {
    let g = curve(ObservableKind::HeraldedG2, &[0.0, 1.0], &[0.0, 1.0]);
    let g_off = curve(ObservableKind::HeraldedG2, &[0.0, 1.0], &[0.5, 1.5]);
    let w = curve(ObservableKind::NcWitnessSignal, &[0.0, 1.0], &[0.0, 1.0]);
    let mut cfg = LossConfig::default();
    cfg.weights.heralded_g2 = 2.0;
    let l = loss(&[g_off.clone(), w.clone()], &[g.clone(), w.clone()], &cfg).unwrap();
    assert!((l.total - 1.0).abs() < 1e-12);
    assert_eq!(l.per_observable.len(), 2);
    assert!(matches!(loss(&[g_off], &[g, w], &cfg), Err(Error::MissingObservable(_))));
}

#[test]
fn loss_skips_non_finite_points() {
    let data = curve(ObservableKind::HeraldedG2, &[0.0, 0.5, 1.0], &[0.0, f64::NAN, 1.0]);
    let model = curve(ObservableKind::HeraldedG2, &[0.0, f64::INFINITY, 1.0], &[0.0, 3.0, 1.0]);
    assert!(loss(&[model], &[data], &LossConfig::default()).unwrap().total.abs() < 1e-15);
    let empty = curve(ObservableKind::HeraldedG2, &[0.0], &[f64::NAN]);
    let data = curve(ObservableKind::HeraldedG2, &[0.0], &[1.0]);
    assert_eq!(loss(&[empty], &[data], &LossConfig::default()).unwrap().total, 1e6);
}

#[test]
fn curve_rejects_mismatched_lengths() {
    assert!(ObservableCurve::new(ObservableKind::QngDepth, vec![1.0], vec![], None).is_err());
    assert!(ObservableCurve::new(ObservableKind::QngDepth, vec![1.0], vec![1.0], Some(vec![0.0])).is_err());
}

#[test]
fn default_bounds_cover_published_sets() {
    let cfg = FitConfig::new(1);
    let b = cfg.resolved_bounds().unwrap();
    for comb in [Combination::H11Given13, Combination::H11Given12, Combination::H12Given11] {
        let x = PhaseMode::Fixed.to_vector(&ModelParams::table_s1(comb));
        for (j, v) in x.iter().enumerate() {
            assert!(b.lo()[j] <= *v && *v <= b.hi()[j], "{comb:?} {}", PhaseMode::Fixed.free_names()[j]);
        }
    }
    assert_eq!(FitConfig { phase_mode: PhaseMode::Free, ..cfg }.resolved_bounds().unwrap().dim(), 17);
}

#[test]
fn fit_config_toml() {
    let text = r#"
seed = 42
phase_mode = "free"

[intensity]
min = 0.2
max = 0.6
points = 6

[bounds]
r_h = [0.5, 0.6]

[loss.weights]
qng_depth = 0.5

[optimizer.random_search]
draws = 50
keep = 5
"#;
    let cfg = FitConfig::from_toml_str(text).unwrap();
    assert_eq!(cfg.seed, 42);
    assert_eq!(cfg.phase_mode, PhaseMode::Free);
    assert_eq!(cfg.loss.weights.qng_depth, 0.5);
    assert_eq!(cfg.optimizer.random_search.draws, 50);
    let back = FitConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(back, cfg);

    assert!(FitConfig::from_toml_str("phase_mode = \"fixed\"").is_err(), "seed is required");
    assert!(FitConfig::from_toml_str("seed = 1\n[bounds]\nI_0 = [1.0, 2.0]\nphase_mode = 1").is_err());
    assert!(FitConfig::from_toml_str("seed = 1\nphase_mode = \"free\"\n[bounds]\nI_0 = [1.0, 2.0]").is_err());
    assert!(FitConfig::from_toml_str("seed = 1\n[bounds]\nr_s = [0.5, 0.1]").is_err());
    assert!(FitConfig::from_toml_str("seed = 1\nbogus = 3").is_err());
}

#[test]
fn fit_needs_two_kinds() {
    let cfg = FitConfig::new(1);
    let c = curve(ObservableKind::HeraldedG2, &[0.1], &[0.2]);
    assert!(matches!(fit(&[c], &cfg), Err(Error::MissingObservable(_))));
}

fn tiny_fit_config(seed: u64, truth: &ModelParams) -> FitConfig {
    let mut cfg = FitConfig::new(seed);
    cfg.fock = FockConfig::new(10, 24, 1e-4).unwrap();
    cfg.intensity = IntensityRange { min: 0.1, max: 0.4, points: 4 };
    // Only a few parameters are left free so the search is short.
    let names = cfg.phase_mode.free_names();
    let x = cfg.phase_mode.to_vector(truth);
    for (name, v) in names.iter().zip(x) {
        let half = match *name {
            "r_s" | "r_h" => 0.1,
            "alpha_h" => 0.2,
            _ => 0.0,
        };
        cfg.bounds.insert(name.to_string(), [v - half, v + half]);
    }
    cfg.model.i0 = truth.i0;
    cfg.optimizer = OptimizerSettings {
        random_search: optimize::RandomSearchSettings { draws: 100, keep: 5 },
        evolution: optimize::EvolutionSettings { generations: 15, population_factor: 5, ..Default::default() },
        annealing: optimize::AnnealingSettings { steps: 200, local_evaluations: 150, ..Default::default() },
    };
    cfg
}

#[test]
fn fit_recovers_pinned_subset_deterministically() {
    let mut truth = ModelParams::table_s1(Combination::H12Given11);
    truth.squeeze_phase_s = PI;
    truth.squeeze_phase_h = PI;
    truth.phi_bs1 = 0.0;
    let cfg = tiny_fit_config(9, &truth);
    let data = forward(&truth, &cfg.intensity.grid().unwrap(), &cfg.detector, &cfg.fock)
        .unwrap()
        .curves();
    let a = fit(&data, &cfg).unwrap();
    let b = fit(&data, &cfg).unwrap();
    assert_eq!(a, b);
    let truth_loss = evaluate_params(&truth, &data, &cfg).unwrap().total;
    assert!(truth_loss < 1e-12);
    assert!(a.loss < 1e-3, "loss {}", a.loss);
    assert_eq!(a.stage_trace.len(), 3);
    assert_eq!(a.evaluations, a.stage_trace.iter().map(|s| s.evaluations).sum::<usize>());
    let json: serde_json::Value = serde_json::from_str(&a.summary_json().unwrap()).unwrap();
    assert!(json["per_observable_loss"]["qng_depth"].is_number());
}
