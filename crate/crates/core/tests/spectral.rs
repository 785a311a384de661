//! Spectral summaries of behavior chains.

use nalgebra::DMatrix;
use treemax::variance::log_slope;
use treemax::{
    analyze_spectrum, generate_mdp, induce_chain, power_remainder, InducedChain, Regime, RegimeSpec,
};

#[test]
fn two_state_second_eigenvalue_is_trace_minus_one() {
    let chain = InducedChain::from_transition(DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.5, 0.5])).unwrap();
    let report = analyze_spectrum(&chain).unwrap();
    assert!((report.lambda2_modulus - 0.4).abs() < 1e-12);
    assert!((report.eigenvalue_moduli[0] - 1.0).abs() < 1e-9);
}

#[test]
fn rank_one_chain_has_no_remainder() {
    let row = [0.2, 0.5, 0.3];
    let chain = InducedChain::from_transition(DMatrix::from_fn(3, 3, |_, j| row[j])).unwrap();
    assert!(analyze_spectrum(&chain).unwrap().lambda2_modulus < 1e-10);
    for d in 2..6 {
        assert!(power_remainder(&chain, d).unwrap() < 1e-12);
    }
}

#[test]
fn remainder_slope_tracks_lambda2() {
    let mut checked = 0;
    for seed in 0..20 {
        let spec = RegimeSpec::new(Regime::Random, 0.1, 5, 3);
        let (mdp, behavior) = generate_mdp(&spec, seed).unwrap();
        let chain = induce_chain(&mdp, &behavior).unwrap();
        let lambda2 = analyze_spectrum(&chain).unwrap().lambda2_modulus;
        let (x, y): (Vec<f64>, Vec<f64>) = (5..=25)
            .map(|d| (d as f64, power_remainder(&chain, d).unwrap()))
            .filter(|&(_, r)| r > 1e-11)
            .unzip();
        if x.len() < 10 {
            continue;
        }
        let slope = log_slope(&x, &y);
        assert!(
            (slope - lambda2.ln()).abs() <= 0.1 * lambda2.ln().abs(),
            "seed {seed}: slope {slope} vs ln|l2| {}",
            lambda2.ln()
        );
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} chains decayed slowly enough to fit");
}

#[test]
fn permutation_regime_is_flagged() {
    let spec = RegimeSpec::new(Regime::NearPermutation, 0.0, 5, 2);
    let (mdp, behavior) = generate_mdp(&spec, 3).unwrap();
    let report = analyze_spectrum(&induce_chain(&mdp, &behavior).unwrap()).unwrap();
    assert!(!report.mixing_flag);
    assert!((report.lambda2_modulus - 1.0).abs() < 1e-9);
}
