mod common;

use ride::synth::generate;
use ride_core::{validate_bundle, ConditionId, TraceBundle};

use common::tiny_spec;

fn bundle() -> TraceBundle {
    generate(&tiny_spec(4, 11)).unwrap()
}

#[test]
fn synthetic_bundles_pass() {
    let report = validate_bundle(&bundle());
    assert!(report.passed(), "{:?}", report.violations);
}

#[test]
fn attention_row_summing_to_one_and_a_half() {
    let mut b = bundle();
    let trace = &mut b.instances.get_mut("syn-0001").unwrap().conditions[0];
    let p = trace.attention_prompt_last.positions;
    for w in &mut trace.attention_prompt_last.weights[..p] {
        *w *= 1.5;
    }
    let report = validate_bundle(&b);
    assert!(
        report.has_rule("attention row sum"),
        "{:?}",
        report.violations
    );
    let v = &report.violations[0];
    assert_eq!(v.instance.as_deref(), Some("syn-0001"));
    assert_eq!(v.condition, Some(ConditionId::Control));
}

#[test]
fn three_generations_with_k_five() {
    let mut spec = tiny_spec(2, 5);
    spec.k = 5;
    let mut b = generate(&spec).unwrap();
    b.instances.get_mut("syn-0000").unwrap().conditions[2]
        .generations
        .truncate(3);
    let report = validate_bundle(&b);
    assert!(report.has_rule("generation count"));
    assert_eq!(report.violations.len(), 1, "{:?}", report.violations);
}

#[test]
fn every_problem_is_reported() {
    let mut b = bundle();
    let inst = b.instances.get_mut("syn-0002").unwrap();
    inst.conditions[0].visible_mask.pop();
    inst.conditions[1].hidden.data[0] = f32::NAN;
    inst.conditions[2].generations[0]
        .embedding
        .iter_mut()
        .for_each(|x| *x = 0.0);
    inst.conditions[3].keyword_positions = vec![0];
    b.manifest.seed_list.pop();
    let report = validate_bundle(&b);
    for rule in [
        "visible mask",
        "hidden values",
        "embedding norm",
        "keyword positions",
        "seed list",
    ] {
        assert!(
            report.has_rule(rule),
            "missing {rule}: {:?}",
            report.violations
        );
    }
}

#[test]
fn sparse_distribution_mass_is_checked() {
    use ride_core::trace::SparseDistribution;
    let mut b = bundle();
    let g = &mut b.instances.get_mut("syn-0000").unwrap().conditions[0].generations[0];
    g.token_distributions = Some(
        (0..g.token_count)
            .map(|_| SparseDistribution {
                top: vec![(0, 0.5), (1, 0.3)],
                tail_mass: 0.1,
            })
            .collect(),
    );
    assert!(validate_bundle(&b).has_rule("distribution mass"));
}
