use exposure_wasm::{ble_payloads, decode_payload, encounter, run_trace};

#[test]
fn encounter_tokens_are_complementary() {
    let e = encounter(1, 2).unwrap();
    assert!(e.complementary());
    assert_ne!(e.rtl_a(), e.etl_a());
    assert_eq!(e.ebid_a().len(), 64);
    assert_eq!(encounter(1, 2).unwrap().rtl_a(), e.rtl_a());
}

#[test]
fn payloads_decode() {
    let text = ble_payloads(7, 1, 0xC5).unwrap();
    let (adv, rsp) = text.split_once('\n').unwrap();
    assert_eq!(adv.len(), 58);
    assert_eq!(rsp.len(), 48);
    let ebid = encounter(7, 8).unwrap().ebid_a();
    let adv_text = decode_payload(adv).unwrap();
    assert!(adv_text.contains(&format!("ID_L      {}", &ebid[32..])), "{adv_text}");
    assert!(adv_text.contains("tx gain   197"));
    let rsp_text = decode_payload(rsp).unwrap();
    assert!(rsp_text.contains(&format!("ID_H      {}", &ebid[..32])), "{rsp_text}");
}

#[test]
fn small_trace_runs() {
    let trace = "population 2\nhorizon_days 3\n36000 start 0 1\n37800 end 0 1\n90000 diagnose 0\n";
    let summary = run_trace(trace, 5, false).unwrap();
    assert!(summary.contains("notified devices (1): [1]"), "{summary}");
}
