mod common;

use std::sync::Arc;

use common::bio_suite;
use proptest::prelude::*;
use rse_core::bio::{decode_tags, encode_tags, TagSequence, TagSet};

#[test]
fn ten_thousand_structures_per_scheme() {
    let (failures, tried) = bio_suite(11, 10_000);
    assert_eq!(tried, 20_000);
    assert_eq!(failures, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Decoding any tag sequence, valid or not, yields a structure whose
    /// encoding is valid and decodes to the same structure.
    #[test]
    fn decode_then_encode_is_stable(tags in prop::collection::vec(0..5usize, 1..25)) {
        let tagset = Arc::new(TagSet::role_typed(&["A", "B"]));
        let seq = TagSequence::new(tags.clone(), Arc::clone(&tagset));
        let s = decode_tags(&seq, None);
        let again = encode_tags(&s, tags.len(), &tagset, None).unwrap();
        prop_assert!(again.is_valid());
        prop_assert_eq!(decode_tags(&again, None).canonical(), s.canonical());
        if seq.is_valid() {
            prop_assert_eq!(again.tags, tags);
        }
    }

    #[test]
    fn binary_decode_recovers_valid_sequences(mut tags in prop::collection::vec(0..3usize, 1..25)) {
        let tagset = Arc::new(TagSet::binary());
        let (b, i) = (tagset.begin(0), tagset.inside(0));
        for j in 0..tags.len() {
            if tags[j] == i && (j == 0 || tags[j - 1] == 0) {
                tags[j] = b;
            }
        }
        let seq = TagSequence::new(tags.clone(), Arc::clone(&tagset));
        prop_assert!(seq.is_valid());
        let s = decode_tags(&seq, Some("R"));
        prop_assert!(s.relations().all(|r| r == "R"));
        prop_assert_eq!(encode_tags(&s, tags.len(), &tagset, Some("R")).unwrap().tags, tags);
    }
}
