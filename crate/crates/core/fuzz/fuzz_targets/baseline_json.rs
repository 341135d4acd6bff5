#![no_main]
use apood::baselines::BaselineModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = BaselineModel::from_json(text) {
        let json = model.to_json().unwrap();
        assert_eq!(BaselineModel::from_json(&json).unwrap().to_json().unwrap(), json);
    }
});
