#![no_main]

use libfuzzer_sys::fuzz_target;

use ktnas::genome::{Genome, SearchSpace};

fuzz_target!(|data: &[u8]| {
    let Some((&num, rest)) = data.split_first() else {
        return;
    };
    let num = usize::from(num % 16);
    // signed codes so out-of-range negatives are exercised too
    let codes: Vec<i64> = rest.iter().map(|&b| i64::from(b as i8)).collect();
    let Ok(g) = Genome::decode(&codes, num) else {
        return;
    };
    let encoded = g.encode();
    assert_eq!(encoded.len(), codes.len());
    assert!(encoded.iter().zip(&codes).all(|(&e, &c)| i64::from(e) == c));
    assert!(SearchSpace::initial(num, g.blocks_per_side()).admits(&g));
});
