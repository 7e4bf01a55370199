mod common;

use common::arb_action;
use evoforge_core::action::{detokenize, parse_action, serialize_action, tokenize_action, ActionType};
use evoforge_core::reward::{reward, ScreenGeometry};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn dsl_round_trips(a in arb_action(5000)) {
        let text = serialize_action(&a);
        prop_assert_eq!(parse_action(&text).unwrap(), a.clone());
        let seq = tokenize_action(&a);
        prop_assert_eq!(detokenize(&seq).unwrap(), text);
    }

    #[test]
    fn reward_is_bounded_and_maximal_on_identity(a in arb_action(300), b in arb_action(300), w in 1u32..400, h in 1u32..400) {
        let g = ScreenGeometry::new(w, h).unwrap();
        let r = reward(&a, &b, g).unwrap();
        prop_assert!((0.0..=2.0).contains(&r.total));
        prop_assert!((0.0..=1.0).contains(&r.r_dist));
        if a.kind() != b.kind() {
            prop_assert_eq!(r.total, 0.0);
        }
        let own = reward(&a, &a, g).unwrap();
        prop_assert!((own.total - 2.0).abs() < 1e-12, "{} scored {}", a, own.total);
    }
}

#[test]
fn aliases_serialize_canonically() {
    let a = parse_action("finish_task()").unwrap();
    assert_eq!(a.kind(), ActionType::Finished);
    assert_eq!(serialize_action(&a), "finished()");
    let t = parse_action("type_text(text='hi')").unwrap();
    assert_eq!(serialize_action(&t), "type(text='hi')");
}
