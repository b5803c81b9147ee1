#![no_main]

use libfuzzer_sys::fuzz_target;

use ktnas::genome::Genome;

fuzz_target!(|data: &[u8]| {
    let Some((&num, text)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(text) else {
        return;
    };
    let num = usize::from(num % 16);
    if let Ok(g) = Genome::from_json(text, num) {
        assert_eq!(g.num_features(), num);
        assert_eq!(Genome::from_json(&g.to_json(), num).unwrap(), g);
    }
});
