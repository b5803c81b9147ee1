#![no_main]

use libfuzzer_sys::fuzz_target;

use ktnas::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // a line starting with "set " becomes an override
    let (sets, body): (Vec<&str>, Vec<&str>) = text.lines().partition(|l| l.starts_with("set "));
    let sets: Vec<String> = sets.iter().map(|l| l[4..].to_string()).collect();
    if let Ok(config) = RunConfig::parse(&body.join("\n"), &sets) {
        assert_eq!(RunConfig::parse(&config.to_toml(), &[]).unwrap(), config);
    }
});
