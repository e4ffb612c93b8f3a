use serde_json::Value;
use xai_web::Demo;

fn parse(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn embedded_model_loads() {
    let demo = Demo::load().unwrap();
    assert_eq!(demo.sample_count(), 64);
    assert!(demo.describe().starts_with("0: Conv2D"));
}

#[test]
fn recommend_for_vision_and_structured() {
    let demo = Demo::load().unwrap();
    let vision = parse(&demo.recommend_json("V").unwrap());
    assert_eq!(vision["recommended"].as_array().unwrap().len(), 11);
    let both = parse(&demo.recommend_json("vision, SD").unwrap());
    assert_eq!(both["recommended"], serde_json::json!(["lime", "kernel_shap"]));
    assert!(demo.recommend_json("").is_err());
    assert!(demo.recommend_json("audio").is_err());
}

#[test]
fn heatmap_has_one_rgba_pixel_per_input_pixel() {
    let demo = Demo::load().unwrap();
    let v = parse(&demo.explain_json("grad_x_input", 1, "", 0).unwrap());
    assert_eq!(v["heatmap"]["width"], 16);
    assert_eq!(v["heatmap"]["rgba"].as_array().unwrap().len(), 16 * 16 * 4);
    assert_eq!(v["input"]["rgba"].as_array().unwrap().len(), 16 * 16 * 4);
    assert!(v["mass_accuracy"].is_number() || v["mass_accuracy"].is_null());
}

#[test]
fn params_are_passed_through() {
    let demo = Demo::load().unwrap();
    assert!(demo.explain_json("lime", 0, r#"{"n_samples": 64, "cell": 4}"#, 1).is_ok());
    let err = demo.explain_json("lime", 0, r#"{"bogus": 1}"#, 1).unwrap_err();
    assert!(err.contains("bogus"), "{err}");
    assert!(demo.explain_json("gradient", 999, "", 0).is_err());
}

#[test]
fn curves_start_at_the_model_probability() {
    let demo = Demo::load().unwrap();
    let v = parse(&demo.curves_json("integrated_gradients", 2, r#"{"n_steps": 16}"#, 0, 8).unwrap());
    let (morf, lerf) = (v["morf"].as_array().unwrap(), v["lerf"].as_array().unwrap());
    assert_eq!(morf.len(), 9);
    assert_eq!(morf[0], lerf[0]);
    assert_eq!(morf[8], lerf[8]);
    assert!(v["abpc"].as_f64().unwrap() > 0.0);
}
