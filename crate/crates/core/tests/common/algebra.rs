//! Strategies and property bodies for the refinement algebra.

use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use semdec::metamodel::{AttrValue, Metamodel};
use semdec::partial_model::{EdgeKey, ElementRef, ModelDelta, PartialModel, Refinement, Truth};

const META: &str = r#"{
  "node_types": [
    {"name": "Item", "abstract": true},
    {"name": "Box", "extends": "Item", "attributes": {"label": {"enum": ["x", "y"]}}},
    {"name": "Ball", "extends": "Item"}
  ],
  "edge_types": [{"name": "holds", "source": "Box", "target": "Item", "multiplicity": "0..2"}]
}"#;

const IDS: [&str; 4] = ["n0", "n1", "n2", "n3"];

fn meta() -> Arc<Metamodel> {
    Arc::new(Metamodel::from_json(META).unwrap())
}

pub fn truth() -> impl Strategy<Value = Truth> {
    prop_oneof![
        Just(Truth::Certain),
        Just(Truth::Possible),
        Just(Truth::Absent),
        Just(Truth::Error)
    ]
}

fn id() -> impl Strategy<Value = String> {
    prop::sample::select(&IDS[..]).prop_map(String::from)
}

pub fn refinement() -> impl Strategy<Value = Refinement> {
    let key = || (id(), id()).prop_map(|(s, t)| EdgeKey::new("holds", s, t));
    prop_oneof![
        (id(), prop::sample::select(vec!["Box", "Ball"]), truth())
            .prop_map(|(id, ty, truth)| Refinement::AddNode { id, ty: ty.into(), truth }),
        (key(), truth()).prop_map(|(key, truth)| Refinement::AddEdge { key, truth }),
        (id(), truth()).prop_map(|(id, truth)| Refinement::RefineNode { id, truth }),
        (key(), truth()).prop_map(|(key, truth)| Refinement::RefineEdge { key, truth }),
        (id(), prop::sample::select(vec!["x", "y", "z"])).prop_map(|(id, v)| Refinement::SetAttribute {
            id,
            slot: "label".into(),
            value: AttrValue::Str(v.into()),
        }),
    ]
}

/// Applies refinements one at a time, skipping the ones the model rejects
/// as ill-formed (unknown elements, dangling edges).
pub fn build(rs: &[Refinement]) -> PartialModel {
    let mut pm = PartialModel::new(meta());
    for r in rs {
        if let Ok(next) = pm.apply_delta(&ModelDelta(vec![r.clone()])) {
            pm = next;
        }
    }
    pm
}

fn elements(pm: &PartialModel) -> Vec<(ElementRef, Truth)> {
    let mut out: Vec<(ElementRef, Truth)> =
        pm.nodes().map(|(id, n)| (ElementRef::Node(id.to_string()), n.truth)).collect();
    out.extend(pm.edges().map(|(k, t)| (ElementRef::Edge(k.clone()), t)));
    out
}

/// The legal one-step truth transitions, written out as a table.
pub fn table(from: Truth, to: Truth) -> Truth {
    use Truth::*;
    match (from, to) {
        (Possible, x) => x,
        (Certain, Certain) => Certain,
        (Absent, Absent) => Absent,
        _ => Error,
    }
}

pub fn refinements(max: usize) -> impl Strategy<Value = Vec<Refinement>> {
    prop::collection::vec(refinement(), 0..max)
}

pub fn transitions_follow_the_table(a: Truth, b: Truth) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.refine(b), table(a, b));
    Ok(())
}

pub fn error_absorbs(setup: Vec<Refinement>, more: Vec<Refinement>) -> Result<(), TestCaseError> {
    let pm = build(&setup);
    let errors: Vec<ElementRef> = pm.error_elements().collect();
    let mut all = setup;
    all.extend(more);
    let after = build(&all);
    for e in errors {
        prop_assert_eq!(after.truth_of(&e), Truth::Error, "{:?} left ERROR", e);
    }
    for t in [Truth::Certain, Truth::Possible, Truth::Absent, Truth::Error] {
        prop_assert_eq!(Truth::Error.refine(t), Truth::Error);
    }
    Ok(())
}

pub fn certainty_is_monotone(setup: Vec<Refinement>, r: Refinement) -> Result<(), TestCaseError> {
    let pm = build(&setup);
    if let Ok(next) = pm.apply_delta(&ModelDelta(vec![r])) {
        for (e, t) in elements(&pm) {
            let now = next.truth_of(&e);
            match t {
                Truth::Certain => prop_assert!(matches!(now, Truth::Certain | Truth::Error), "{:?}: CERTAIN became {}", e, now),
                Truth::Error => prop_assert_eq!(now, Truth::Error),
                _ => {}
            }
        }
    }
    Ok(())
}

pub fn apply_delta_is_pure(setup: Vec<Refinement>, d1: Vec<Refinement>, d2: Vec<Refinement>) -> Result<(), TestCaseError> {
    let pm = build(&setup);
    let before = pm.clone();
    let (d1, d2) = (ModelDelta(d1), ModelDelta(d2));
    let once = pm.apply_delta(&d1);
    prop_assert_eq!(&pm, &before);
    prop_assert_eq!(&once, &pm.apply_delta(&d1));
    if let Ok(m1) = &once {
        let mut joined = d1.clone();
        joined.extend(d2.clone());
        prop_assert_eq!(m1.apply_delta(&d2), pm.apply_delta(&joined));
    }
    Ok(())
}
