#![no_main]

use libfuzzer_sys::fuzz_target;

use ktnas::dataset::{derive_features, make_windows, parse_jsonl, FeatureVocabulary};

const SCHEMA: FeatureVocabulary = FeatureVocabulary {
    exercises: 50,
    skills: 7,
    tags: 12,
    tagsets: 20,
    bundles: 13,
};

fuzz_target!(|data: &[u8]| {
    for schema in [None, Some(&SCHEMA)] {
        let Ok((logs, vocab)) = parse_jsonl(data, schema) else {
            continue;
        };
        if let Some(s) = schema {
            assert_eq!(&vocab, s);
        }
        for log in &logs {
            assert!(log.records.windows(2).all(|w| w[0].timestamp_ms <= w[1].timestamp_ms));
            let seq = derive_features(&log.records);
            assert_eq!(seq.len(), log.records.len());
            let windows = make_windows(&log.student, &seq, 8);
            let valid: usize = windows.iter().map(|w| w.valid_len()).sum();
            assert_eq!(valid, log.records.len());
        }
    }
});
