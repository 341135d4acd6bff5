#![no_main]
use apood::model::ApoodModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = ApoodModel::from_json(text) {
        let again = ApoodModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(again.to_json().unwrap(), model.to_json().unwrap());
    }
});
