use layerloom_core::batch::{self, ConvertJob};
use layerloom_core::frontends::ExportOptions;
use layerloom_core::ir::Framework;
use layerloom_core::layout::LayoutConfig;
use layerloom_core::{synth, zoo};

#[test]
fn batch_matches_sequential() {
    let models: Vec<_> = (0..40).map(|s| synth::random_model(&mut synth::rng(s), Framework::Caffe, 60)).collect();
    let c = LayoutConfig::default();
    assert_eq!(batch::layout_all(&models, &c), batch::sequential::layout_all(&models, &c));
    assert_eq!(batch::count_all(&models), batch::sequential::count_all(&models));

    let jobs: Vec<ConvertJob> = zoo::entries()
        .iter()
        .flat_map(|e| {
            [Framework::Caffe, Framework::Keras].map(|target| ConvertJob {
                text: e.text.to_string(),
                source: e.framework,
                target,
            })
        })
        .collect();
    let opts = ExportOptions::default();
    let (par, seq) = (batch::convert_all(&jobs, &opts), batch::sequential::convert_all(&jobs, &opts));
    assert_eq!(par, seq);
    assert!(par.iter().any(Result::is_err) && par.iter().any(Result::is_ok));
}
