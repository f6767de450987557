#![no_main]

use fkchi::cli::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::from_toml_str(text) {
        // Anything accepted must survive its own echo.
        let echoed = toml::to_string(&config).expect("accepted config serializes");
        let again = RunConfig::from_toml_str(&echoed).expect("echo reparses");
        assert_eq!(again, config);
        let _ = config.sweep_points();
    }
});
