use adawave::synth::{Family, SynthSpec};
use std::f64::consts::PI;

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn noise(spec: &SynthSpec) -> Vec<f64> {
    let g = spec.generate().unwrap();
    let clean = spec.denoised_target().unwrap();
    g.data().iter().zip(clean.data()).map(|(a, b)| a - b).collect()
}

#[test]
fn simple_family_literal_values() {
    let spec = SynthSpec::default();
    assert_eq!((spec.f1, spec.f2, spec.alpha, spec.t0, spec.beta), (5.0, 50.0, 50.0, 0.5, 1.0));
    assert!(spec.clean_value(0.0).abs() < 1e-12);
    assert!((spec.clean_value(0.5) - 0.5).abs() < 1e-12);
    let t = 0.3;
    let want = (2.0 * PI * 5.0 * t).sin() + (2.0 * PI * 50.0 * t).sin() * (-50.0 * 0.04f64).exp() + t;
    assert!((spec.clean_value(t) - want).abs() < 1e-12);
    let d = spec.denoised_target().unwrap();
    assert_eq!(d.shape(), &[1, 1024]);
    assert!(d.data()[0].abs() < 1e-12);
}

#[test]
fn other_families_match_their_formulas() {
    let traffic = SynthSpec::family(Family::Traffic);
    let elec = SynthSpec::family(Family::Electricity);
    for t in [0.0, 0.13, 0.5, 0.77, 1.0] {
        let tr = (2.0 * PI * 24.0 * t).sin() + 0.5 * (4.0 * PI * 24.0 * t).sin() + (2.0 * PI * 7.0 * t).sin() + 0.5 * t;
        let el = 5.0 * (2.0 * PI * t).sin() + 2.0 * (4.0 * PI * t).sin() + 3.0 * (2.0 * PI * 365.0 * t).sin() + 2.0 * t;
        assert!((traffic.clean_value(t) - tr).abs() < 1e-12);
        assert!((elec.clean_value(t) - el).abs() < 1e-12);
    }
}

#[test]
fn noise_free_generation_equals_the_denoised_target() {
    for family in [Family::Simple, Family::Traffic, Family::Electricity] {
        let spec = SynthSpec {
            noise_std: 0.0,
            seed: 42,
            ..SynthSpec::family(family)
        };
        assert_eq!(spec.generate().unwrap(), spec.denoised_target().unwrap());
    }
}

#[test]
fn variance_shift_scales_noise_after_onset() {
    let spec = SynthSpec {
        n_points: 10_000,
        variance_shift: 2.0,
        seed: 3,
        ..SynthSpec::default()
    };
    let e = noise(&spec);
    let onset = spec.onset_index();
    assert_eq!(onset, 5_000);
    let ratio = std_dev(&e[onset..]) / std_dev(&e[..onset]);
    assert!((ratio / 3.0 - 1.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn step_change_shifts_the_mean_after_onset() {
    for step in [-0.5, 0.5] {
        let spec = SynthSpec {
            n_points: 10_000,
            step,
            seed: 8,
            ..SynthSpec::default()
        };
        let e = noise(&spec);
        let onset = spec.onset_index();
        let after = e[onset..].iter().sum::<f64>() / (e.len() - onset) as f64;
        let before = e[..onset].iter().sum::<f64>() / onset as f64;
        let se = spec.noise_std / (onset as f64).sqrt();
        assert!((after - step).abs() < 4.0 * se, "step {step}: {after}");
        assert!(before.abs() < 4.0 * se);
    }
}

#[test]
fn generation_is_seeded() {
    let a = SynthSpec { seed: 1, ..SynthSpec::default() };
    let b = SynthSpec { seed: 2, ..SynthSpec::default() };
    assert_eq!(a.generate().unwrap(), a.generate().unwrap());
    assert_ne!(a.generate().unwrap(), b.generate().unwrap());
}

#[test]
fn parse_family_names() {
    assert_eq!("traffic".parse::<Family>().unwrap(), Family::Traffic);
    assert!("weather".parse::<Family>().is_err());
    assert!(SynthSpec { n_points: 1, ..SynthSpec::default() }.generate().is_err());
}
