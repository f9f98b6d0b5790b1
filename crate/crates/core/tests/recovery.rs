use patchfish_core::econ::{critical_value, EstimateSet};
use patchfish_core::panel::BuildOptions;
use patchfish_core::pipeline::{compare_with_truth, estimate, recovery_score, EstimationOptions};
use patchfish_core::simulator::{default_scenario, run, run_expected, Scenario};
use patchfish_core::stage1::{alpha1_label, alpha2_label, BetaSource};
use patchfish_core::stage2::{
    alpha0_label, alpha1_label as reduced_alpha1_label, build_migration_rows, fit_stage2, recover_structure,
    reduced_form_of, stage2_sur_options, AuxFit, StructuralMapping,
};
use patchfish_core::panel::CellMap;

fn true_biomass(s: &Scenario, out: &patchfish_core::simulator::SimOutput) -> CellMap<f64> {
    let mut m = CellMap::new();
    for t in 0..out.months() {
        for k in 0..s.n_patches() {
            m.insert((out.period(t), k), out.biomass[t][k]);
        }
    }
    m
}

#[test]
fn noiseless_pipeline_recovers_every_parameter() {
    let s = default_scenario();
    let out = run_expected(&s).unwrap();
    let panel = out.panel(&s, BuildOptions::default()).unwrap();
    let est = estimate(&panel, &s.graph, &BetaSource::Calibrate(out.annual_totals()), &EstimationOptions::default())
        .unwrap();

    assert!((est.capture.gamma / s.tech.gamma - 1.0).abs() < 1e-5);
    assert!((est.capture.beta - s.tech.beta).abs() < 1e-5);
    for a in &est.capture.alpha {
        assert!((a - s.tech.alpha).abs() < 1e-5);
    }
    for y in &est.stage1.years {
        for j in 0..s.n_ports() {
            let a1 = est.stage1.estimates.get(&alpha1_label(*y, j)).unwrap();
            assert!((a1 - s.ports[j].price_coefficient.unwrap()).abs() < 1e-5);
        }
        assert!((est.stage1.estimates.get(&alpha2_label(*y)).unwrap() - s.tech.alpha).abs() < 1e-5);
    }
    // β·ln x̂ against β·ln x on every cell.
    let truth = true_biomass(&s, &out);
    for (cell, e) in &est.biomass.effects {
        let expected = s.tech.beta * truth[cell].ln();
        assert!((e - expected).abs() < 1e-5, "{cell:?}: {e} vs {expected}");
    }
    for (label, value) in reduced_form_of(s.bio.r(), s.bio.carrying_capacity(), &s.dispersion, &s.graph) {
        let got = est.reduced.get(&label).unwrap();
        assert!((got - value).abs() < 1e-5 * value.abs().max(1e-3), "{label}: {got} vs {value}");
    }
}

#[test]
fn stage2_on_true_noiseless_biomass_matches_transition() {
    let s = default_scenario();
    let out = run_expected(&s).unwrap();
    let panel = out.panel(&s, BuildOptions::default()).unwrap();
    let rows = build_migration_rows(&true_biomass(&s, &out), &s.graph, Some(&panel.patch_catch())).unwrap();
    let reduced = fit_stage2(&rows, &stage2_sur_options()).unwrap();
    for (label, value) in reduced_form_of(s.bio.r(), s.bio.carrying_capacity(), &s.dispersion, &s.graph) {
        let got = reduced.get(&label).unwrap();
        assert!((got - value).abs() <= 1e-6 * value.abs().max(1e-6), "{label}: {got} vs {value}");
    }
}

#[test]
fn default_grid_equations_have_four_to_six_parameters() {
    let s = default_scenario();
    let out = run_expected(&s).unwrap();
    let rows = build_migration_rows(&true_biomass(&s, &out), &s.graph, None).unwrap();
    assert_eq!(rows.len(), 8);
    for r in &rows {
        assert!((4..=6).contains(&r.n_params()));
        assert_eq!(r.n_params(), s.graph.degree(r.patch) + 2);
    }
    let n_cross: usize = rows.iter().map(|r| r.neighbors.len()).sum();
    assert_eq!(n_cross, 20);
}

/// Patch 8 has a negative point capacity whose 80 % upper-limit value is
/// positive, as in the published capacity table (-80.330 and 11.757).
#[test]
fn negative_point_capacity_falls_back_to_upper_limit() {
    let s = default_scenario();
    let r = 0.02868;
    let z80 = critical_value(0.80).unwrap();
    let a1_8 = r / -80.330;
    let se_8 = (r / 11.757 - a1_8) / z80;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut ses = Vec::new();
    for (label, value) in reduced_form_of(r, s.bio.carrying_capacity(), &s.dispersion, &s.graph) {
        let (v, se) = if label == reduced_alpha1_label(7) { (a1_8, se_8) } else { (value, 0.1 * value.abs()) };
        labels.push(label);
        values.push(v);
        ses.push(se);
    }
    let reduced = EstimateSet::from_values(labels, values, ses);
    let k_total = 2.0e6;
    let aux = AuxFit {
        r,
        k_total,
        estimates: EstimateSet::from_values(vec!["r".into(), "K".into()], vec![r, k_total], vec![0.001, 1e5]),
    };
    let st = recover_structure(&reduced, &s.graph, &aux, 0.80, StructuralMapping::Expansion).unwrap();
    assert_eq!(st.fallback_patches(), vec![7]);
    let c8 = &st.capacity[7];
    assert!((c8.point + 80.330).abs() < 1e-9);
    assert!((c8.at_80 - 11.757).abs() < 1e-9);
    assert_eq!(c8.chosen, Some(c8.at_80));
    assert!(st.capacity.iter().all(|c| c.rescaled.is_some_and(|v| v > 0.0)));
    let total: f64 = st.capacity.iter().filter_map(|c| c.rescaled).sum();
    assert!((total / k_total - 1.0).abs() < 1e-12);
    assert!(reduced.get(&alpha0_label(0)).is_ok());
}

#[test]
fn capacity_without_positive_upper_limit_is_unidentified() {
    let s = default_scenario();
    let r = 0.1;
    let (labels, mut values): (Vec<String>, Vec<f64>) =
        reduced_form_of(r, s.bio.carrying_capacity(), &s.dispersion, &s.graph).into_iter().unzip();
    let i = labels.iter().position(|l| *l == reduced_alpha1_label(2)).unwrap();
    values[i] = -1e-6;
    let ses = values.iter().map(|v| 1e-3 * v.abs()).collect();
    let reduced = EstimateSet::from_values(labels, values, ses);
    let aux = AuxFit {
        r,
        k_total: 1e6,
        estimates: EstimateSet::from_values(vec!["r".into(), "K".into()], vec![r, 1e6], vec![0.0, 0.0]),
    };
    let st = recover_structure(&reduced, &s.graph, &aux, 0.9, StructuralMapping::Expansion).unwrap();
    assert_eq!(st.capacity[2].chosen, None);
    assert_eq!(st.capacity[2].rescaled, None);
    let total: f64 = st.capacity.iter().filter_map(|c| c.rescaled).sum();
    assert!((total / 1e6 - 1.0).abs() < 1e-12);
}

#[test]
fn paper_mapping_changes_only_own_rates() {
    let s = default_scenario();
    let r = 0.1;
    let (labels, values): (Vec<String>, Vec<f64>) =
        reduced_form_of(r, s.bio.carrying_capacity(), &s.dispersion, &s.graph).into_iter().unzip();
    let ses = vec![1e-9; labels.len()];
    let reduced = EstimateSet::from_values(labels, values, ses);
    let aux = AuxFit {
        r,
        k_total: 2e6,
        estimates: EstimateSet::from_values(vec!["r".into(), "K".into()], vec![r, 2e6], vec![0.0, 0.0]),
    };
    let a = recover_structure(&reduced, &s.graph, &aux, 0.8, StructuralMapping::Expansion).unwrap();
    let b = recover_structure(&reduced, &s.graph, &aux, 0.8, StructuralMapping::Paper).unwrap();
    assert_eq!(a.d_cross, b.d_cross);
    assert_eq!(a.capacity, b.capacity);
    for k in 0..8 {
        let a0 = a.alpha0[k].value;
        assert!((b.d_own[k].value - (r - a0)).abs() < 1e-12);
    }
}

/// Desk noise, seed 1: the first-stage effort elasticity. The sampled
/// log-odds of about three vessels per cell bias it toward zero, so this
/// stays ignored until the first stage is made robust to thin cells.
#[test]
#[ignore = "known shortfall: desk-scale stage-1 effort elasticity is attenuated"]
fn desk_noise_effort_elasticity_within_tolerance() {
    let s = default_scenario();
    let out = run(&s).unwrap();
    let panel = out.panel(&s, BuildOptions::default()).unwrap();
    let est = estimate(&panel, &s.graph, &BetaSource::Calibrate(out.annual_totals()), &EstimationOptions::default())
        .unwrap();
    for a in &est.capture.alpha {
        assert!((a - s.tech.alpha).abs() <= 0.05, "alpha {a}");
    }
}

#[test]
#[ignore = "known shortfall: desk-scale structural recovery misses its tolerances"]
fn desk_noise_structure_within_tolerance() {
    let s = default_scenario();
    let out = run(&s).unwrap();
    let panel = out.panel(&s, BuildOptions::default()).unwrap();
    let est = estimate(&panel, &s.graph, &BetaSource::Calibrate(out.annual_totals()), &EstimationOptions::default())
        .unwrap();
    let score = recovery_score(&s, &est.structure, 0.1, 0.15);
    assert!(score.d_fraction() >= 0.8 && score.k_fraction() >= 0.8, "{score:?}");
}

/// The stochastic path runs end to end and yields finite, comparable output
/// even where accuracy falls short.
#[test]
fn desk_noise_pipeline_completes() {
    let s = default_scenario();
    let out = run(&s).unwrap();
    let panel = out.panel(&s, BuildOptions::default()).unwrap();
    let est = estimate(&panel, &s.graph, &BetaSource::Calibrate(out.annual_totals()), &EstimationOptions::default())
        .unwrap();
    let rows = compare_with_truth(&s, &est);
    assert!(rows.iter().filter(|p| p.name.starts_with("d_")).all(|p| p.estimate.is_finite()));
    assert!(est.structure.k_total > 0.0 && est.structure.r.value > 0.0);
}
