#![no_main]

use libfuzzer_sys::fuzz_target;

use ktnas::checkpoint::{Checkpoint, Manifest};

// Input: manifest JSON, a NUL byte, then the weight blob.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(text) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let blob = data.get(split + 1..).unwrap_or(&[]);
    let Ok(manifest) = Manifest::parse(text) else {
        return;
    };
    if let Ok(ck) = Checkpoint::decode(&manifest, blob) {
        let (again, bytes) = ck.encode();
        assert_eq!(bytes, blob);
        assert_eq!(again.tensors, manifest.tensors);
    }
});
